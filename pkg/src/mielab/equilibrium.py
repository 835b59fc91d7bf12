"""Equilibrium certification and stability analysis for the coupled system.

Certification checks three residual families on a frozen joint state:
stationarity of the parameter update G (neural), of the belief update F
(cognitive), and the best-response gap of the materialized policies
(behavioral). A state passing all three is certified in full; exactly two
gives a marginal certificate.

Stability works on the mean-field map: the expectation of one coupled tick,
estimated with M common-random-number samples. Fixed points come from
damped iteration, local structure from a central-difference Jacobian, and
equilibrium selection from basin maps over grids of initial conditions.
"""

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .agents import BeliefState, MultilevelAgentState, Policy, act, joint_step_Phi, neural_update_G
from .errors import ConfigError, DataError, NumericalError
from .games import InducedMdp, TabularMarkovGame, sample_initial_state, single_agent_mdp, step
from .util import set_config_value, tv_distance

VALUE_SPAN_TOL = 1e-10
VALUE_ITER_CAP = 200_000
FIXED_POINT_STEP_TOL = 1e-8
FIXED_POINT_ITER_CAP = 10_000
DIVERGENCE_NORM = 1e6
ATTRACTOR_MERGE_TOL = 1e-4
MAX_JACOBIAN_DIM = 200
MIN_RESIDUAL_SAMPLES = 10
POLICY_ROW_TOL = 1e-9

STABLE = "stable"
UNSTABLE = "unstable"
NEUTRAL_LINE = "neutral/line-attractor"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class ToleranceConfig:
    """Thresholds for certification and drift detection."""

    eps_neural: float = 1e-2
    eps_cognitive: float = 1e-2
    eps_policy: float = 1e-2
    eps_brgap: float = 1e-2
    window: int = 3
    samples: int = 1000
    neutral_band: float = 1e-3

    def __post_init__(self):
        for name in ("eps_neural", "eps_cognitive", "eps_policy", "eps_brgap", "neutral_band"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0.0):
                raise ConfigError(f"{name} must be a positive real")
            object.__setattr__(self, name, v)
        if int(self.window) < 2:
            raise ConfigError("drift window must be >= 2")
        if int(self.samples) < 1:
            raise ConfigError("sample count must be >= 1")
        object.__setattr__(self, "window", int(self.window))
        object.__setattr__(self, "samples", int(self.samples))

    def to_dict(self) -> dict:
        return {
            "eps_neural": self.eps_neural,
            "eps_cognitive": self.eps_cognitive,
            "eps_policy": self.eps_policy,
            "eps_brgap": self.eps_brgap,
            "window": self.window,
            "samples": self.samples,
            "neutral_band": self.neutral_band,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "ToleranceConfig":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(cfg) - known
        if bad:
            raise ConfigError(f"unknown tolerance keys {sorted(bad)}")
        return cls(**cfg)


@dataclass(frozen=True)
class ResidualEstimate:
    """Monte Carlo residual with its standard error."""

    value: float
    se: float

    def to_dict(self) -> dict:
        return {"value": self.value, "se": self.se}


# ---------------------------------------------------------------------------
# stationary-interaction sampling for the residual estimators


def _as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(rng)))


def _interaction_samples(scenario, states, n_samples: int, rng, burn_in: int, tick: int):
    """Observation tuples from the frozen-policy interaction chain.

    Policies and beliefs stay frozen at `states`; only the environment state
    chains, which after burn-in approximates the stationary interaction
    distribution the residual definitions quantify over.
    """
    game = scenario.game
    n = game.n_agents
    gen = _as_generator(rng)
    s = sample_initial_state(game, gen)
    for _ in range(burn_in):
        actions = tuple(act(states[i], s, gen) for i in range(n))
        s, _ = step(game, s, actions, gen)
    out = []
    for _ in range(n_samples):
        exo = scenario.exogenous(tick, gen)
        actions = tuple(act(states[i], s, gen) for i in range(n))
        s_next, rewards = step(game, s, actions, gen)
        hooked = scenario.reward_hook(tick, s, actions, rewards, s_next, states, exo)
        if hooked is not None:
            rewards = np.asarray(hooked, dtype=np.float64)
        obs = scenario.observe(tick, s, actions, rewards, s_next, states, exo)
        out.append(obs)
        s = s_next
    return out


def _mc_norm_se(samples: np.ndarray, norm: int) -> float:
    # standard error of the sample-mean vector, collapsed with the same norm
    m = samples.shape[0]
    if m < 2 or samples.shape[1] == 0:
        return 0.0
    se = samples.std(axis=0, ddof=1) / math.sqrt(m)
    if norm == 1:
        return float(np.abs(se).sum())
    return float(np.linalg.norm(se))


def neural_residual(scenario, states, n_samples: int = 1000, rng=0, burn_in: int = 100, tick: int = 0):
    """Per-agent stationarity defect of the parameter update G.

    Estimates || mean_k G_i(theta_i, signal_k) - theta_i ||_2 over the
    frozen-policy interaction distribution. Returns one ResidualEstimate
    per agent.
    """
    if n_samples < MIN_RESIDUAL_SAMPLES:
        raise ConfigError(f"residual estimation needs at least {MIN_RESIDUAL_SAMPLES} samples")
    specs = scenario.agent_specs()
    batches = _interaction_samples(scenario, states, n_samples, rng, burn_in, tick)
    out = []
    for i, spec in enumerate(specs):
        theta = states[i].theta
        if spec.neural is None or theta.alpha == 0.0 or theta.values.size == 0:
            out.append(ResidualEstimate(0.0, 0.0))
            continue
        diffs = np.zeros((n_samples, theta.values.size))
        for k, obs in enumerate(batches):
            th = theta
            for sig in spec.neural.signals(th, obs[i], tick):
                th = neural_update_G(th, sig)
            diffs[k] = th.values - theta.values
        mean = diffs.mean(axis=0)
        out.append(ResidualEstimate(float(np.linalg.norm(mean)), _mc_norm_se(diffs, 2)))
    return out


def cognitive_residual(scenario, states, n_samples: int = 1000, rng=0, burn_in: int = 100, tick: int = 0):
    """Per-agent stationarity defect of the belief update F (l1 norm)."""
    if n_samples < MIN_RESIDUAL_SAMPLES:
        raise ConfigError(f"residual estimation needs at least {MIN_RESIDUAL_SAMPLES} samples")
    specs = scenario.agent_specs()
    batches = _interaction_samples(scenario, states, n_samples, rng, burn_in, tick)
    out = []
    for i, spec in enumerate(specs):
        belief = states[i].belief
        if spec.cognitive is None:
            out.append(ResidualEstimate(0.0, 0.0))
            continue
        base = _belief_vector(belief)
        diffs = np.zeros((n_samples, base.size))
        for k, obs in enumerate(batches):
            diffs[k] = _belief_vector(spec.cognitive.update(belief, obs[i], tick)) - base
        mean = diffs.mean(axis=0)
        out.append(ResidualEstimate(float(np.abs(mean).sum()), _mc_norm_se(diffs, 1)))
    return out


def _belief_vector(b: BeliefState) -> np.ndarray:
    return b.probs if b.kind == "categorical" else b.mean


# ---------------------------------------------------------------------------
# best-response gap


def value_iteration(mdp: InducedMdp, span_tol: float = VALUE_SPAN_TOL, max_iter: int = VALUE_ITER_CAP):
    """Optimal values by Bellman iteration with a span stopping rule."""
    v = np.zeros(mdp.n_states)
    for it in range(max_iter):
        q = mdp.rewards + mdp.discount * (mdp.transition @ v)
        v_new = q.max(axis=1)
        diff = v_new - v
        if float(diff.max() - diff.min()) < span_tol:
            return v_new, it + 1
        v = v_new
    raise NumericalError(f"value iteration did not reach span {span_tol} in {max_iter} iterations")


def greedy_policy(mdp: InducedMdp, values: np.ndarray) -> np.ndarray:
    """Greedy action per state; ties break toward the lowest index."""
    q = mdp.rewards + mdp.discount * (mdp.transition @ values)
    return q.argmax(axis=1)


def policy_value(mdp: InducedMdp, table: np.ndarray) -> np.ndarray:
    """Exact evaluation of a stationary stochastic policy (linear solve)."""
    tab = np.asarray(table, dtype=np.float64)
    p = np.einsum("sa,sat->st", tab, mdp.transition)
    r = (tab * mdp.rewards).sum(axis=1)
    eye = np.eye(mdp.n_states)
    return np.linalg.solve(eye - mdp.discount * p, r)


def brgap(game: TabularMarkovGame, joint_policy, agent: int, gamma: Optional[float] = None) -> float:
    """Value agent `agent` forfeits by not best-responding to the others.

    Freezes the opponents, solves the induced MDP to optimality (value
    iteration to a 1e-10 span, then exact evaluation of the greedy policy),
    and subtracts the exact evaluation of the agent's own policy, weighted
    by the game's initial distribution. Nonnegative by construction; tiny
    negative round-off is clamped to 0.
    """
    tables = [np.asarray(p, dtype=np.float64) for p in joint_policy]
    if len(tables) != game.n_agents:
        raise ConfigError("joint_policy must carry one table per agent")
    for j, tab in enumerate(tables):
        if tab.shape != (game.n_states, game.n_actions[j]):
            raise ConfigError(
                f"policy table {j} has shape {tab.shape}, expected {(game.n_states, game.n_actions[j])}"
            )
        if np.any(tab < 0.0) or np.any(np.abs(tab.sum(axis=1) - 1.0) > POLICY_ROW_TOL):
            raise ConfigError(f"policy table {j} rows must be distributions")
    mdp = single_agent_mdp(game, agent, tables)
    if gamma is not None:
        if not 0.0 <= float(gamma) < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        mdp = InducedMdp(mdp.transition, mdp.rewards, float(gamma))
    v_star, _ = value_iteration(mdp)
    best = greedy_policy(mdp, v_star)
    one_hot = np.zeros((mdp.n_states, mdp.n_actions))
    one_hot[np.arange(mdp.n_states), best] = 1.0
    v_best = policy_value(mdp, one_hot)
    v_own = policy_value(mdp, tables[agent])
    gap = float(game.initial_dist @ (v_best - v_own))
    return gap if gap > 0.0 else 0.0


# ---------------------------------------------------------------------------
# certification


@dataclass(frozen=True)
class EquilibriumReport:
    """Residuals, gaps, and the resulting certificate."""

    neural: tuple
    cognitive: tuple
    brgap: tuple
    satisfied: tuple
    verdict: str
    tolerances: ToleranceConfig
    e_t: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "neural": list(self.neural),
            "cognitive": list(self.cognitive),
            "brgap": list(self.brgap),
            "satisfied": list(self.satisfied),
            "verdict": self.verdict,
            "tolerances": self.tolerances.to_dict(),
            "e_t": self.e_t,
        }


def check_mie(neural, cognitive, brgaps, tol: ToleranceConfig, e_t: Optional[float] = None) -> EquilibriumReport:
    """Combine the three residual families into a certificate.

    verdict "full" when every family passes for every agent, "marginal"
    when exactly two families pass, "none" otherwise; `satisfied` lists the
    passing families.
    """

    def _vals(xs):
        return tuple(float(getattr(x, "value", x)) for x in xs)

    nv, cv, bv = _vals(neural), _vals(cognitive), _vals(brgaps)
    passing = []
    if all(v <= tol.eps_neural for v in nv):
        passing.append("neural")
    if all(v <= tol.eps_cognitive for v in cv):
        passing.append("cognitive")
    if all(v <= tol.eps_brgap for v in bv):
        passing.append("behavioral")
    verdict = {3: "full", 2: "marginal"}.get(len(passing), "none")
    return EquilibriumReport(
        neural=nv,
        cognitive=cv,
        brgap=bv,
        satisfied=tuple(passing),
        verdict=verdict,
        tolerances=tol,
        e_t=e_t,
    )


# ---------------------------------------------------------------------------
# drift norms and the distance-to-equilibrium diagnostic

LEVELS = ("theta", "belief", "policy")


def level_step_norm(states_a, states_b, level: str) -> float:
    """Drift of one level between two joint states, summed over agents.

    theta uses l2, belief l1, policy total variation summed over rows.
    """
    if level not in LEVELS:
        raise ConfigError(f"unknown level {level!r}; expected one of {LEVELS}")
    total = 0.0
    for sa, sb in zip(states_a, states_b):
        if level == "theta":
            total += float(np.linalg.norm(sb.theta.values - sa.theta.values))
        elif level == "belief":
            total += float(np.abs(_belief_vector(sb.belief) - _belief_vector(sa.belief)).sum())
        else:
            ra = sa.policy.table.reshape(-1, sa.policy.n_actions)
            rb = sb.policy.table.reshape(-1, sb.policy.n_actions)
            if ra.shape != rb.shape:
                raise DataError("policy tables changed shape between snapshots")
            for k in range(ra.shape[0]):
                total += tv_distance(ra[k], rb[k])
    return total


@dataclass(frozen=True)
class DistanceWeights:
    theta: float = 1.0
    belief: float = 1.0
    policy: float = 1.0
    brgap: float = 0.0

    def __post_init__(self):
        for name in ("theta", "belief", "policy", "brgap"):
            v = float(getattr(self, name))
            if v < 0.0:
                raise ConfigError("distance weights must be >= 0")
            object.__setattr__(self, name, v)


def distance_to_equilibrium(log, t: int, weights: DistanceWeights = DistanceWeights(), game=None) -> float:
    """Weighted per-level drift between ticks t and t+1 plus total gap.

    Needs full state snapshots at both ticks (cadence 1, or t+1 the final
    record). The gap term evaluates the policies frozen at tick t and
    requires `game` when its weight is positive.
    """
    states_t = log.snapshot_states(t)
    states_t1 = log.snapshot_states(t + 1)
    total = 0.0
    if weights.theta > 0.0:
        total += weights.theta * level_step_norm(states_t, states_t1, "theta")
    if weights.belief > 0.0:
        total += weights.belief * level_step_norm(states_t, states_t1, "belief")
    if weights.policy > 0.0:
        total += weights.policy * level_step_norm(states_t, states_t1, "policy")
    if weights.brgap > 0.0:
        if game is None:
            raise ConfigError("gap-weighted distance needs the game")
        tables = [st.policy.state_table(st.belief) for st in states_t]
        total += weights.brgap * sum(brgap(game, tables, i) for i in range(game.n_agents))
    return total


def drift_detector(log, level: str, tol: float, window: int) -> Optional[int]:
    """Earliest snapshot tick opening `window` consecutive sub-tol intervals.

    Works on the log's snapshot sequence (the final record counts as the
    closing snapshot). Returns None when drift never stays below tol.
    """
    if window < 1:
        raise ConfigError("window must be >= 1")
    points = _snapshot_points(log)
    if len(points) < window + 1:
        raise DataError(f"drift detection over window {window} needs at least {window + 1} snapshots")
    norms = [
        level_step_norm(points[j][1], points[j + 1][1], level) for j in range(len(points) - 1)
    ]
    run = 0
    for j, v in enumerate(norms):
        run = run + 1 if v < tol else 0
        if run >= window:
            return points[j + 1 - window][0]
    return None


def _snapshot_points(log):
    pts = [(r["t"], log.snapshot_states(r["t"])) for r in log.snapshots()]
    fin = log.final()
    pts.append((fin["t"], log.final_states()))
    return pts


# ---------------------------------------------------------------------------
# joint-state flattening for fixed points and Jacobians


def flatten_states(states) -> np.ndarray:
    """Joint state as a real vector: theta blocks, then beliefs, then policies.

    Categorical beliefs and policy rows drop their last simplex coordinate
    so no direction is constrained; gaussian beliefs contribute their mean
    (covariances are carried along unchanged).
    """
    parts = []
    for st in states:
        parts.append(np.asarray(st.theta.values, dtype=np.float64))
    for st in states:
        b = st.belief
        parts.append(b.probs[:-1] if b.kind == "categorical" else b.mean)
    for st in states:
        rows = st.policy.table.reshape(-1, st.policy.n_actions)
        parts.append(rows[:, :-1].ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def unflatten_states(vec: np.ndarray, template) -> list:
    """Inverse of flatten_states against a template joint state.

    Completes each dropped simplex coordinate as one minus the rest; tiny
    boundary violations (within 1e-6) are projected back onto the simplex,
    larger ones raise.
    """
    vec = np.asarray(vec, dtype=np.float64)
    cur = 0

    def take(n):
        nonlocal cur
        if cur + n > vec.size:
            raise ConfigError("vector too short for the joint-state template")
        out = vec[cur : cur + n]
        cur += n
        return out

    thetas, beliefs, policies = [], [], []
    for st in template:
        vals = take(st.theta.values.size)
        thetas.append(replace(st.theta, values=vals.copy()))
    for st in template:
        b = st.belief
        if b.kind == "categorical":
            probs = _complete_rows(take(b.probs.size - 1)[None, :])[0]
            beliefs.append(replace(b, probs=probs))
        else:
            beliefs.append(replace(b, mean=take(b.mean.size).copy()))
    for st in template:
        pol = st.policy
        n_rows = pol.table.size // pol.n_actions
        chunk = take(n_rows * (pol.n_actions - 1)).reshape(n_rows, pol.n_actions - 1)
        table = _complete_rows(chunk).reshape(pol.table.shape)
        policies.append(replace(pol, table=table))
    if cur != vec.size:
        raise ConfigError("vector longer than the joint-state template")
    return [
        MultilevelAgentState(th, b, p) for th, b, p in zip(thetas, beliefs, policies)
    ]


def _complete_rows(partial: np.ndarray, boundary_tol: float = 1e-6) -> np.ndarray:
    rows = np.empty((partial.shape[0], partial.shape[1] + 1))
    rows[:, :-1] = partial
    rows[:, -1] = 1.0 - partial.sum(axis=1)
    if np.any(rows < -boundary_tol):
        raise NumericalError("simplex coordinate left its domain by more than the boundary tolerance")
    for k in range(rows.shape[0]):
        if np.any(rows[k] < 0.0):
            row = np.clip(rows[k], 0.0, None)
            rows[k] = row / row.sum()
    return rows


# ---------------------------------------------------------------------------
# mean-field map, fixed points, Jacobian


def _bank_root(rng) -> int:
    # a Generator is reduced to one stable root so repeated map evaluations
    # inside an analysis share their seed bank (common random numbers)
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63))
    return int(rng)


def _seed_bank(rng, n: int):
    return np.random.SeedSequence(_bank_root(rng)).spawn(n)


def _spawn_tick_rngs(seq, n_agents: int):
    children = seq.spawn(n_agents + 1)
    gens = [np.random.Generator(np.random.PCG64(c)) for c in children]
    return gens[0], gens[1:]


def mean_field_map(scenario, states, n_samples: int = 1, rng=0, tick: int = 0):
    """Expected one-tick update of the joint state, frozen at `tick`.

    Averages n_samples independent coupled ticks started from the game's
    initial distribution, using a fixed seed bank so repeated calls with the
    same rng share their random numbers (the variance-reduction device the
    fixed-point and Jacobian routines rely on).
    """
    game = scenario.game
    specs = scenario.agent_specs()
    bank = _seed_bank(rng, n_samples)
    acc = None
    for seq in bank:
        env_rng, agent_rngs = _spawn_tick_rngs(seq, game.n_agents)
        s0 = sample_initial_state(game, env_rng)
        exo = scenario.exogenous(tick, env_rng)

        def observe(t_, s_, actions, rewards, s_next, sts):
            return scenario.observe(t_, s_, actions, rewards, s_next, sts, exo)

        def hook(t_, s_, actions, rewards, s_next, sts):
            out = scenario.reward_hook(t_, s_, actions, rewards, s_next, sts, exo)
            return rewards if out is None else out

        _, new_states, _ = joint_step_Phi(
            game, specs, states, s0, tick, env_rng, agent_rngs, observe, hook
        )
        v = flatten_states(new_states)
        acc = v if acc is None else acc + v
    return unflatten_states(acc / len(bank), states)


@dataclass(frozen=True)
class FixedPointResult:
    states: list
    vector: np.ndarray
    residual_trace: tuple
    converged: bool
    diverged: bool
    iterations: int

    @property
    def residual(self) -> float:
        return self.residual_trace[-1]

    def to_dict(self) -> dict:
        return {
            "vector": [float(v) for v in self.vector],
            "residual_trace": [float(r) for r in self.residual_trace],
            "converged": self.converged,
            "diverged": self.diverged,
            "iterations": self.iterations,
        }


def find_fixed_point(
    scenario,
    states=None,
    n_samples: int = 1,
    damping: float = 1.0,
    rng=0,
    tick: int = 0,
    step_tol: float = FIXED_POINT_STEP_TOL,
    max_iter: int = FIXED_POINT_ITER_CAP,
) -> FixedPointResult:
    """Damped iteration x <- (1 - damping) x + damping * mean-field(x).

    Stops when the damped step norm drops below step_tol or after max_iter
    moves; a residual above the divergence threshold stops the iteration
    and is reported on the result, not raised.
    """
    if not 0.0 < damping <= 1.0:
        raise ConfigError("damping must lie in (0, 1]")
    if states is None:
        states = [sp.state for sp in scenario.agent_specs()]
    bank_root = _bank_root(rng)
    x = flatten_states(states)
    cur = states
    trace = []
    moves = 0
    converged = diverged = False
    while True:
        phi = flatten_states(mean_field_map(scenario, cur, n_samples, bank_root, tick))
        resid = float(np.linalg.norm(phi - x))
        trace.append(resid)
        if damping * resid < step_tol:
            converged = True
            break
        if resid > DIVERGENCE_NORM:
            diverged = True
            break
        if moves >= max_iter:
            break
        x = x + damping * (phi - x)
        cur = unflatten_states(x, states)
        moves += 1
    return FixedPointResult(cur, x, tuple(trace), converged, diverged, moves)


def mean_field_jacobian(scenario, states, h: float = 1e-5, n_samples: int = 1, rng=0, tick: int = 0):
    """Central-difference Jacobian of the mean-field map at a joint state.

    Every evaluation reuses one seed bank (common random numbers), so the
    sampling noise cancels across the +/- pair of each column. Returns the
    half-step Jacobian and a finite-difference error estimate (the largest
    entrywise change when halving h).
    """
    if h <= 0.0:
        raise ConfigError("finite-difference step must be positive")
    x = flatten_states(states)
    d = x.size
    if d == 0:
        raise ConfigError("joint state flattens to an empty vector")
    if d > MAX_JACOBIAN_DIM:
        raise ConfigError(f"flattened dimension {d} exceeds the cap {MAX_JACOBIAN_DIM}")
    bank_root = _bank_root(rng)

    def phi(vec):
        sts = unflatten_states(vec, states)
        return flatten_states(mean_field_map(scenario, sts, n_samples, bank_root, tick))

    def jac(step):
        j = np.empty((d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = step
            j[:, k] = (phi(x + e) - phi(x - e)) / (2.0 * step)
        return j

    j_h = jac(h)
    j_half = jac(h / 2.0)
    if not np.all(np.isfinite(j_half)):
        raise NumericalError("Jacobian estimate has non-finite entries")
    err = float(np.max(np.abs(j_half - j_h)))
    return j_half, err


# ---------------------------------------------------------------------------
# stability classification


@dataclass(frozen=True)
class StabilityReport:
    fixed_point: Optional[np.ndarray]
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    spectral_radius: float
    neutral_count: int
    classification: str
    fd_error: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "fixed_point": None if self.fixed_point is None else [float(v) for v in self.fixed_point],
            "jacobian": [[float(v) for v in row] for row in self.jacobian],
            "eigenvalues": [[float(ev.real), float(ev.imag)] for ev in self.eigenvalues],
            "spectral_radius": self.spectral_radius,
            "neutral_count": self.neutral_count,
            "classification": self.classification,
            "fd_error": self.fd_error,
        }


def classify_stability(
    jacobian: np.ndarray,
    neutral_band: float = 1e-3,
    fixed_point: Optional[np.ndarray] = None,
    fd_error: Optional[float] = None,
) -> StabilityReport:
    """Classify a fixed point from the Jacobian spectrum.

    Eigenvalues with modulus within neutral_band of 1 are neutral (they
    carry fixed-point lines, so they must not count as unstable). The
    classification is stable / neutral line-attractor / unstable by the
    largest non-neutral modulus, inconclusive if the spectrum fits none.
    """
    j = np.asarray(jacobian, dtype=np.float64)
    if j.ndim != 2 or j.shape[0] != j.shape[1]:
        raise ConfigError("Jacobian must be square")
    if not np.all(np.isfinite(j)):
        raise NumericalError("Jacobian has non-finite entries")
    try:
        eig = np.linalg.eigvals(j)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolve failed: {exc}") from exc
    mags = np.abs(eig)
    neutral = (mags >= 1.0 - neutral_band) & (mags <= 1.0 + neutral_band)
    non_neutral = mags[~neutral]
    radius = float(non_neutral.max()) if non_neutral.size else 0.0
    n_neutral = int(neutral.sum())
    if np.any(mags > 1.0 + neutral_band):
        label = UNSTABLE
    elif non_neutral.size == 0 or radius < 1.0:
        label = NEUTRAL_LINE if n_neutral else STABLE
    else:
        label = INCONCLUSIVE
    return StabilityReport(
        fixed_point=None if fixed_point is None else np.asarray(fixed_point, dtype=np.float64),
        jacobian=j,
        eigenvalues=eig,
        spectral_radius=radius,
        neutral_count=n_neutral,
        classification=label,
        fd_error=fd_error,
    )


# ---------------------------------------------------------------------------
# basin maps


@dataclass
class BasinMap:
    """Attractor labels over a grid of scenario variations.

    labels[i, j, ...] indexes into `attractors`; -1 marks cells that never
    converged. times holds iterations (fixed-point mode) or the detected
    settling tick (rollout mode).
    """

    axes: tuple
    labels: np.ndarray
    times: np.ndarray
    endpoints: np.ndarray
    attractors: list
    merge_tol: float
    mode: str

    def to_dict(self) -> dict:
        return {
            "axes": [{"name": n, "values": [float(v) for v in vals]} for n, vals in self.axes],
            "labels": self.labels.tolist(),
            "times": self.times.tolist(),
            "attractors": [[float(v) for v in a] for a in self.attractors],
            "merge_tol": self.merge_tol,
            "mode": self.mode,
        }

    def to_csv(self, path, meta: str = ""):
        names = [n for n, _ in self.axes]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            if meta:
                fh.write(f"# {meta}\n")
            fh.write(",".join(names + ["label", "time"]) + "\n")
            for idx in np.ndindex(self.labels.shape):
                coords = [repr(float(self.axes[k][1][idx[k]])) for k in range(len(idx))]
                fh.write(",".join(coords + [str(int(self.labels[idx])), str(int(self.times[idx]))]) + "\n")


_PROJECTIONS = {}


def _register_projection(name):
    def deco(fn):
        _PROJECTIONS[name] = fn
        return fn

    return deco


@_register_projection("policy")
def _project_policy(states):
    return np.concatenate([st.policy.table.ravel() for st in states])


@_register_projection("policy_greedy")
def _project_policy_greedy(states):
    rows = []
    for st in states:
        table = st.policy.table.reshape(-1, st.policy.n_actions)
        rows.extend(float(np.argmax(table[k])) for k in range(table.shape[0]))
    return np.asarray(rows)


@_register_projection("belief")
def _project_belief(states):
    return np.concatenate([_belief_vector(st.belief) for st in states])


def _cell_seed(seed: int, idx: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(idx)]).generate_state(1, np.uint64)[0])


def _basin_cell(args):
    (idx, cfg, mode, opts) = args
    from .scenarios import make_scenario

    scenario = make_scenario(cfg)
    seed = _cell_seed(opts["seed"], idx)
    project = opts.get("project")
    proj_fn = _PROJECTIONS[project] if isinstance(project, str) else project
    if mode == "fixed_point":
        res = find_fixed_point(
            scenario,
            n_samples=opts["n_samples"],
            damping=opts["damping"],
            rng=seed,
            tick=opts["tick"],
            max_iter=opts["max_iter"],
        )
        endpoint = np.asarray(proj_fn(res.states) if proj_fn else res.vector, dtype=np.float64)
        return idx, res.converged, endpoint, res.iterations
    from .engine import RunConfig, rollout

    log = rollout(scenario, RunConfig(seed=seed, horizon=opts["horizon"], snapshot_cadence=opts["cadence"]))
    points = _snapshot_points(log)
    norms = [
        sum(level_step_norm(points[j][1], points[j + 1][1], lev) for lev in LEVELS)
        for j in range(len(points) - 1)
    ]
    settle = len(norms)
    for j in range(len(norms) - 1, -1, -1):
        if norms[j] >= opts["settle_tol"]:
            break
        settle = j
    converged = settle < len(norms)
    t_settle = points[settle][0] if converged else log.final()["t"]
    final = log.final_states()
    endpoint = np.asarray(proj_fn(final) if proj_fn else flatten_states(final), dtype=np.float64)
    return idx, converged, endpoint, t_settle


def basin_map(
    base_config: dict,
    axes: Sequence,
    mode: str = "fixed_point",
    n_samples: int = 1,
    damping: float = 1.0,
    tick: int = 0,
    max_iter: int = FIXED_POINT_ITER_CAP,
    horizon: int = 1000,
    cadence: int = 10,
    settle_tol: float = 1e-3,
    merge_tol: float = ATTRACTOR_MERGE_TOL,
    seed: int = 0,
    project=None,
    jobs: int = 1,
) -> BasinMap:
    """Map attractors over a grid of scenario-config overrides.

    axes: up to three (config key, values) pairs; each grid cell rebuilds
    the scenario with those keys overridden, runs it to its endpoint, and
    endpoints within merge_tol (sup norm) share an attractor label. Cells
    are independent, so jobs > 1 fans them out over processes; labels are
    assigned in canonical cell order either way.
    """
    if mode not in ("fixed_point", "rollout"):
        raise ConfigError(f"unknown basin mode {mode!r}")
    axes = tuple((str(name), np.asarray(vals, dtype=np.float64)) for name, vals in axes)
    if not 1 <= len(axes) <= 3:
        raise ConfigError("basin grids take one to three axes")
    shape = tuple(len(vals) for _, vals in axes)
    n_cells = int(np.prod(shape))
    if n_cells > 100_000:
        raise ConfigError(f"grid has {n_cells} cells; the cap is 100000")
    if isinstance(project, str) and project not in _PROJECTIONS:
        raise ConfigError(f"unknown projection {project!r}; known: {sorted(_PROJECTIONS)}")
    opts = {
        "seed": int(seed),
        "n_samples": n_samples,
        "damping": damping,
        "tick": tick,
        "max_iter": max_iter,
        "horizon": horizon,
        "cadence": cadence,
        "settle_tol": settle_tol,
        "project": project,
    }
    tasks = []
    for idx, coords in enumerate(np.ndindex(shape)):
        cfg = dict(base_config)
        for k, (name, vals) in enumerate(axes):
            set_config_value(cfg, name, float(vals[coords[k]]))
        tasks.append((idx, cfg, mode, opts))
    if jobs > 1:
        import multiprocessing

        with multiprocessing.Pool(jobs) as pool:
            results = pool.map(_basin_cell, tasks)
        results.sort(key=lambda r: r[0])
    else:
        results = [_basin_cell(t) for t in tasks]
    labels = np.full(shape, -1, dtype=np.int64)
    times = np.zeros(shape, dtype=np.int64)
    endpoints = np.zeros((n_cells, results[0][2].size))
    attractors: list = []
    for (idx, converged, endpoint, t_c), coords in zip(results, np.ndindex(shape)):
        endpoints[idx] = endpoint
        times[coords] = t_c
        if not converged:
            continue
        label = -1
        for k, a in enumerate(attractors):
            if a.size == endpoint.size and float(np.max(np.abs(a - endpoint))) <= merge_tol:
                label = k
                break
        if label < 0:
            attractors.append(np.asarray(endpoint, dtype=np.float64))
            label = len(attractors) - 1
        labels[coords] = label
    return BasinMap(axes, labels, times, endpoints.reshape(shape + (-1,)), attractors, merge_tol, mode)
