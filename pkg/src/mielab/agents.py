"""Three-level agent state (theta, b, pi) and the coupled update operators.

One tick of the joint system runs: act for all agents, environment step,
observation construction, belief update F, parameter update G, policy
refresh H. H always consumes the already-updated theta and belief.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError, MielabError, NumericalError
from .games import TabularMarkovGame, step
from .util import index_from_uniform, stable_softmax

SIMPLEX_TOL = 1e-12
MAX_BELIEF_DEPTH = 2
DEFAULT_BELIEF_BINS = 11


def _frozen_array(x, dtype=np.float64):
    arr = np.array(x, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class NeuralParams:
    """Slow-timescale parameter vector with its learning rate.

    `shape` is an optional interpretation hint, e.g. (S, A) when values is a
    flattened Q-table.
    """

    values: np.ndarray
    alpha: float
    shape: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        vals = _frozen_array(self.values)
        if vals.ndim != 1:
            raise ConfigError("neural values must be a flat vector")
        if not np.all(np.isfinite(vals)):
            raise ConfigError("neural values must be finite")
        alpha = float(self.alpha)
        # alpha = 0 is legal and makes the update operator the identity.
        if not (math.isfinite(alpha) and alpha >= 0.0):
            raise ConfigError(f"learning rate {alpha!r} must be finite and >= 0")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "alpha", alpha)
        if self.shape is not None:
            shape = tuple(int(n) for n in self.shape)
            size = 1
            for n in shape:
                size *= n
            if size != vals.size:
                raise ConfigError(f"shape {shape} does not fit {vals.size} values")
            object.__setattr__(self, "shape", shape)

    def table(self) -> np.ndarray:
        if self.shape is None:
            raise ConfigError("neural params carry no table shape")
        return self.values.reshape(self.shape)


@dataclass(frozen=True)
class BeliefState:
    """Categorical or gaussian belief, optionally nested (level-k).

    depth 0 beliefs are static context, depth 1 beliefs model the opponent's
    action, depth 2 adds a nested model of the opponent's own belief.
    """

    kind: str
    probs: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None
    depth: int = 1
    nested: Optional["BeliefState"] = None

    def __post_init__(self):
        if self.kind == "categorical":
            if self.probs is None:
                raise ConfigError("categorical belief needs probs")
            probs = _frozen_array(self.probs)
            if probs.ndim != 1 or probs.size == 0:
                raise ConfigError("belief probs must be a nonempty vector")
            if np.any(probs < 0.0):
                raise ConfigError("belief probs must be nonnegative")
            if abs(float(probs.sum()) - 1.0) > SIMPLEX_TOL:
                raise ConfigError(f"belief probs sum to {float(probs.sum())!r}")
            object.__setattr__(self, "probs", probs)
        elif self.kind == "gaussian":
            if self.mean is None:
                raise ConfigError("gaussian belief needs a mean")
            mean = _frozen_array(self.mean)
            if mean.ndim != 1:
                raise ConfigError("gaussian mean must be a vector")
            if self.cov is None:
                cov = np.zeros((mean.size, mean.size))
            else:
                cov = np.asarray(self.cov, dtype=np.float64)
            if cov.shape != (mean.size, mean.size):
                raise ConfigError("covariance shape does not match mean")
            if not np.allclose(cov, cov.T, atol=1e-10):
                raise ConfigError("covariance must be symmetric")
            if mean.size and float(np.linalg.eigvalsh(cov).min()) < -1e-10:
                raise ConfigError("covariance must be positive semidefinite")
            object.__setattr__(self, "mean", mean)
            object.__setattr__(self, "cov", _frozen_array(cov))
        else:
            raise ConfigError(f"unknown belief kind {self.kind!r}")
        depth = int(self.depth)
        if depth < 0 or depth > MAX_BELIEF_DEPTH:
            raise ConfigError(
                f"belief depth {depth} unsupported: nesting is capped at depth {MAX_BELIEF_DEPTH}"
            )
        object.__setattr__(self, "depth", depth)
        if depth >= 2 and self.nested is None:
            raise ConfigError("depth >= 2 beliefs must carry a nested belief")
        if depth < 2 and self.nested is not None:
            raise ConfigError("nested belief only allowed at depth >= 2")


@dataclass(frozen=True)
class Policy:
    """Materialized action distributions per state.

    kind "softmax_of_q" marks tables that the refresh operator recomputes
    from Q-values at inverse temperature beta. Tabular policies may condition
    on a belief bucket, in which case the table has shape (S, bins, A) and
    the acting bucket is the first belief coordinate quantized on [0, 1].
    """

    kind: str
    table: np.ndarray
    beta: Optional[float] = None
    belief_bins: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("tabular", "softmax_of_q"):
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        table = _frozen_array(self.table)
        if self.belief_bins is None:
            if table.ndim != 2:
                raise ConfigError("policy table must have shape (S, A)")
        else:
            bins = int(self.belief_bins)
            if bins < 1:
                raise ConfigError("belief_bins must be >= 1")
            if table.ndim != 3 or table.shape[1] != bins:
                raise ConfigError("bucketed policy table must have shape (S, bins, A)")
            object.__setattr__(self, "belief_bins", bins)
        rows = table.reshape(-1, table.shape[-1])
        if np.any(rows < 0.0):
            raise ConfigError("policy table has negative probabilities")
        if np.any(np.abs(rows.sum(axis=1) - 1.0) > SIMPLEX_TOL):
            raise ConfigError("policy rows must sum to 1")
        object.__setattr__(self, "table", table)
        if self.kind == "softmax_of_q":
            if self.beta is None:
                raise ConfigError("softmax_of_q policy needs beta")
            beta = float(self.beta)
            if not (math.isfinite(beta) and beta > 0.0):
                raise ConfigError(f"beta {beta!r} must be finite and > 0")
            object.__setattr__(self, "beta", beta)
        elif self.beta is not None:
            object.__setattr__(self, "beta", float(self.beta))

    @property
    def n_states(self) -> int:
        return self.table.shape[0]

    @property
    def n_actions(self) -> int:
        return self.table.shape[-1]

    def dist(self, s: int, belief: Optional[BeliefState] = None) -> np.ndarray:
        if self.belief_bins is None:
            return self.table[s]
        return self.table[s, belief_bucket(belief, self.belief_bins)]

    def state_table(self, belief: Optional[BeliefState] = None) -> np.ndarray:
        """The (S, A) table in effect for a frozen belief."""
        if self.belief_bins is None:
            return self.table
        return self.table[:, belief_bucket(belief, self.belief_bins), :]


def belief_bucket(belief: BeliefState, bins: int) -> int:
    """Quantize the belief's leading coordinate onto a [0, 1] grid."""
    if belief is None:
        raise ConfigError("bucketed policy needs a belief to act")
    coord = belief.probs[0] if belief.kind == "categorical" else belief.mean[0]
    idx = int(math.floor(float(coord) * bins))
    return min(max(idx, 0), bins - 1)


@dataclass(frozen=True)
class MultilevelAgentState:
    theta: NeuralParams
    belief: BeliefState
    policy: Policy


@dataclass(frozen=True)
class Observation:
    """What one agent sees after a tick. None marks a masked field."""

    state: int
    next_state: int
    own_action: int
    opp_actions: Optional[Tuple[int, ...]] = None
    reward: Optional[float] = None
    signal: object = None


@dataclass(frozen=True)
class LearningSignal:
    """Scalar error plus the parameter context it applies to.

    index selects a single theta entry; direction scales a dense update.
    With both unset the delta is applied to every entry.
    """

    delta: float
    index: Optional[int] = None
    direction: Optional[np.ndarray] = None

    def __post_init__(self):
        if not math.isfinite(float(self.delta)):
            raise NumericalError(f"learning signal delta {self.delta!r} not finite")
        object.__setattr__(self, "delta", float(self.delta))
        if self.index is not None:
            object.__setattr__(self, "index", int(self.index))
        if self.direction is not None:
            object.__setattr__(self, "direction", _frozen_array(self.direction))


# ---------------------------------------------------------------------------
# primitive operators


def act(agent: MultilevelAgentState, s: int, rng) -> int:
    """Sample an action from pi(. | s, b) with one uniform draw."""
    probs = agent.policy.dist(s, agent.belief)
    return index_from_uniform(rng.random(), probs)


def belief_update_F(belief: BeliefState, likelihood, nested_likelihood=None) -> BeliefState:
    """Bayes posterior: prior times likelihood, renormalized.

    likelihood None means the observation was masked; the belief is returned
    unchanged. Depth-2 beliefs also update their nested belief when a nested
    likelihood is supplied.
    """
    if likelihood is None:
        return belief
    if belief.kind != "categorical":
        raise ConfigError("Bayes update needs a categorical belief")
    like = np.asarray(likelihood, dtype=np.float64)
    if like.shape != belief.probs.shape:
        raise ConfigError(
            f"likelihood shape {like.shape} does not match belief {belief.probs.shape}"
        )
    if np.any(like < 0.0):
        raise ConfigError("likelihood entries must be nonnegative")
    post = belief.probs * like
    total = float(post.sum())
    if total <= 0.0:
        raise NumericalError("likelihood is zero on the belief's whole support")
    post = post / total
    nested = belief.nested
    if belief.depth >= 2 and nested_likelihood is not None:
        nested = belief_update_F(nested, nested_likelihood)
    return replace(belief, probs=post, nested=nested)


def neural_update_G(theta: NeuralParams, signal: Optional[LearningSignal]) -> NeuralParams:
    """theta + alpha * (gradient estimate carried by the signal)."""
    if signal is None or theta.alpha == 0.0:
        return theta
    values = theta.values.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        if signal.index is not None:
            values[signal.index] = values[signal.index] + theta.alpha * signal.delta
            bad = not math.isfinite(values[signal.index])
        else:
            if signal.direction is not None:
                values = values + theta.alpha * signal.delta * signal.direction
            else:
                values = values + theta.alpha * signal.delta
            bad = not np.all(np.isfinite(values))
    if bad:
        where = signal.index if signal.index is not None else int(
            np.flatnonzero(~np.isfinite(values))[0]
        )
        raise NumericalError(f"non-finite neural update at index {where}")
    return replace(theta, values=values)


def smooth_best_response(payoff, belief_probs, beta: float) -> np.ndarray:
    """pi(a) proportional to exp(beta * E_xi[payoff(a, xi)]).

    Expected payoffs accumulate left to right; the compiled kernel mirrors
    this loop exactly.
    """
    pay = np.asarray(payoff, dtype=np.float64)
    n_a, n_h = pay.shape
    exp_pay = np.empty(n_a)
    for a in range(n_a):
        acc = 0.0
        for h in range(n_h):
            acc += pay[a, h] * float(belief_probs[h])
        exp_pay[a] = acc
    return stable_softmax(exp_pay, beta)


def policy_refresh_H(
    policy: Policy,
    theta: NeuralParams,
    belief: BeliefState,
    payoff=None,
) -> Policy:
    """Recompute the materialized policy from updated theta and belief.

    softmax_of_q: rows become softmax(beta * Q(s, .)), plus an optional
    belief-weighted payoff term added to the logits. tabular with a payoff
    matrix: smooth best response to the belief. tabular without payoff:
    identity.
    """
    if policy.kind == "softmax_of_q":
        q = theta.table()
        n_s, n_a = q.shape
        extra = None
        if payoff is not None:
            extra = np.asarray(payoff, dtype=np.float64) @ belief.probs
        table = np.empty((n_s, n_a))
        for s in range(n_s):
            logits = q[s] if extra is None else q[s] + extra
            table[s] = stable_softmax(logits, policy.beta)
        return replace(policy, table=table)
    if payoff is None:
        return policy
    if belief.kind != "categorical":
        raise ConfigError("smooth best response needs a categorical belief")
    row = smooth_best_response(payoff, belief.probs, policy.beta)
    if policy.belief_bins is None:
        table = np.tile(row, (policy.n_states, 1))
    else:
        table = np.tile(row, (policy.n_states, policy.belief_bins, 1))
    return replace(policy, table=table)


# ---------------------------------------------------------------------------
# operator wiring


@dataclass(frozen=True)
class OperatorSchedule:
    """Apply an operator every `period` ticks, offset by `phase`.

    period 0 freezes the operator entirely.
    """

    period: int = 1
    phase: int = 0

    def __post_init__(self):
        if self.period < 0:
            raise ConfigError("operator period must be >= 0")
        if self.period and not 0 <= self.phase < self.period:
            raise ConfigError("operator phase must lie in [0, period)")

    def applies(self, t: int) -> bool:
        return self.period > 0 and t % self.period == self.phase


class CognitiveOp:
    def update(self, belief: BeliefState, obs: Observation, t: int) -> BeliefState:
        raise NotImplementedError


class BayesCognitive(CognitiveOp):
    """Posterior over latent hypotheses given the observed opponent action.

    likelihood[h, a] = p(opponent plays a | hypothesis h). For depth-2
    beliefs, nested_likelihood scores the agent's own action under the
    opponent's hypothesis space.
    """

    def __init__(self, likelihood, nested_likelihood=None, watch: int = 0):
        self.likelihood = _frozen_array(likelihood)
        self.nested_likelihood = (
            None if nested_likelihood is None else _frozen_array(nested_likelihood)
        )
        self.watch = int(watch)

    def update(self, belief, obs, t):
        if obs.opp_actions is None:
            return belief
        a = obs.opp_actions[self.watch]
        nested = None
        if self.nested_likelihood is not None:
            nested = self.nested_likelihood[:, obs.own_action]
        return belief_update_F(belief, self.likelihood[:, a], nested)


class FrequencyCognitive(CognitiveOp):
    """Running empirical frequency of the watched opponent's actions.

    Pull rate 1/(prior_count + t + 1) reproduces count-based fictitious
    play with prior_count pseudo-observations behind the initial belief.
    """

    def __init__(self, prior_count: float = 1.0, watch: int = 0):
        if prior_count < 0.0:
            raise ConfigError("prior_count must be >= 0")
        self.prior_count = float(prior_count)
        self.watch = int(watch)

    def update(self, belief, obs, t):
        if obs.opp_actions is None:
            return belief
        a = obs.opp_actions[self.watch]
        rho = 1.0 / (self.prior_count + t + 1.0)
        probs = belief.probs.copy()
        for j in range(probs.size):
            ind = 1.0 if j == a else 0.0
            probs[j] = probs[j] + rho * (ind - probs[j])
        return replace(belief, probs=probs)


class PullCognitive(CognitiveOp):
    """Scalar-mean belief pulled toward a transformed observation.

    b <- b + rate * (target - b) with target = max(o - bias, 0) when
    clamped, applied only when gate_action matches (if set). Source "signal"
    reads obs.signal, source "reward" reads obs.reward.
    """

    def __init__(self, rate, bias=0.0, clamp_nonneg=False, gate_action=None, source="signal"):
        if not 0.0 <= float(rate):
            raise ConfigError("pull rate must be >= 0")
        if source not in ("signal", "reward"):
            raise ConfigError(f"unknown pull source {source!r}")
        self.rate = float(rate)
        self.bias = float(bias)
        self.clamp_nonneg = bool(clamp_nonneg)
        self.gate_action = gate_action if gate_action is None else int(gate_action)
        self.source = source

    def update(self, belief, obs, t):
        if self.gate_action is not None and obs.own_action != self.gate_action:
            return belief
        o = obs.signal if self.source == "signal" else obs.reward
        if o is None:
            return belief
        if belief.kind != "gaussian":
            raise ConfigError("pull update needs a gaussian (mean) belief")
        target = np.asarray(o, dtype=np.float64).reshape(belief.mean.shape)
        if self.bias != 0.0 or self.clamp_nonneg:
            target = target - self.bias
            if self.clamp_nonneg:
                target = np.maximum(target, 0.0)
        mean = belief.mean + self.rate * (target - belief.mean)
        return replace(belief, mean=mean)


class NeuralOp:
    def signals(self, theta: NeuralParams, obs: Observation, t: int):
        raise NotImplementedError


class QLearningNeural(NeuralOp):
    """One-step tabular TD: delta = r + gamma * max_a' Q(s', a') - Q(s, a)."""

    def __init__(self, gamma: float):
        if not 0.0 <= gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        self.gamma = float(gamma)

    def signals(self, theta, obs, t):
        if obs.reward is None:
            return []
        q = theta.table()
        n_a = q.shape[1]
        row = q[obs.next_state]
        best = row[0]
        for a in range(1, n_a):
            if row[a] > best:
                best = row[a]
        idx = obs.state * n_a + obs.own_action
        delta = obs.reward + self.gamma * best - theta.values[idx]
        return [LearningSignal(delta=delta, index=idx)]


class SignalNeural(NeuralOp):
    """Passes through LearningSignals prepared by the scenario."""

    def signals(self, theta, obs, t):
        sig = obs.signal
        if sig is None:
            return []
        if isinstance(sig, LearningSignal):
            return [sig]
        return [s for s in sig if isinstance(s, LearningSignal)]


class BehavioralOp:
    def refresh(self, policy: Policy, theta: NeuralParams, belief: BeliefState) -> Policy:
        raise NotImplementedError


class SoftmaxQBehavioral(BehavioralOp):
    def refresh(self, policy, theta, belief):
        return policy_refresh_H(policy, theta, belief)


class SmoothBRBehavioral(BehavioralOp):
    def __init__(self, payoff):
        self.payoff = _frozen_array(payoff)

    def refresh(self, policy, theta, belief):
        return policy_refresh_H(policy, theta, belief, payoff=self.payoff)


class FixedBehavioral(BehavioralOp):
    def refresh(self, policy, theta, belief):
        return policy


@dataclass(frozen=True)
class AgentSpec:
    """Initial state plus operator wiring and schedules for one agent."""

    state: MultilevelAgentState
    cognitive: Optional[CognitiveOp] = None
    neural: Optional[NeuralOp] = None
    behavioral: Optional[BehavioralOp] = None
    cognitive_schedule: OperatorSchedule = field(default_factory=OperatorSchedule)
    neural_schedule: OperatorSchedule = field(default_factory=OperatorSchedule)
    behavioral_schedule: OperatorSchedule = field(default_factory=OperatorSchedule)


def default_observations(s, s_next, actions, rewards):
    obs = []
    for i in range(len(actions)):
        others = tuple(a for j, a in enumerate(actions) if j != i)
        obs.append(
            Observation(
                state=s,
                next_state=s_next,
                own_action=actions[i],
                opp_actions=others,
                reward=float(rewards[i]),
            )
        )
    return obs


def joint_step_Phi(
    game: TabularMarkovGame,
    specs,
    states,
    s: int,
    t: int,
    env_rng,
    agent_rngs,
    observe=None,
    reward_hook=None,
):
    """One tick of the coupled system.

    Returns (next state, updated agent states, record) where the record
    carries (t, s, actions, rewards, observations). Draw order is fixed:
    one uniform per agent in agent order, then one for the environment.
    reward_hook lets a scenario replace the tensor rewards with quantities
    that depend on internal levels (utilities the game state cannot carry).
    """
    actions = tuple(act(states[i], s, agent_rngs[i]) for i in range(len(specs)))
    s_next, rewards = step(game, s, actions, env_rng)
    if reward_hook is not None:
        rewards = np.asarray(
            reward_hook(t, s, actions, rewards, s_next, states), dtype=np.float64
        )
    if observe is None:
        obs = default_observations(s, s_next, actions, rewards)
    else:
        obs = observe(t, s, actions, rewards, s_next, states)
    new_states = []
    for i, spec in enumerate(specs):
        state = states[i]
        try:
            belief = state.belief
            if spec.cognitive is not None and spec.cognitive_schedule.applies(t):
                belief = spec.cognitive.update(belief, obs[i], t)
            theta = state.theta
            if spec.neural is not None and spec.neural_schedule.applies(t):
                for sig in spec.neural.signals(theta, obs[i], t):
                    theta = neural_update_G(theta, sig)
            policy = state.policy
            if spec.behavioral is not None and spec.behavioral_schedule.applies(t):
                policy = spec.behavioral.refresh(policy, theta, belief)
        except MielabError as exc:
            raise type(exc)(f"agent {i} at tick {t}: {exc}") from exc
        new_states.append(MultilevelAgentState(theta, belief, policy))
    record = {"t": t, "s": s, "actions": actions, "rewards": rewards, "obs": obs}
    return s_next, new_states, record
