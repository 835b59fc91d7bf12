"""Tabular Markov games with dense transition and reward tensors.

A game couples N agents on a finite state space. The transition tensor has
shape (S, A_1, ..., A_N, S) and the reward tensor (N, S, A_1, ..., A_N).
Everything downstream (simulation, induced MDPs, equilibrium checks) works
off these two arrays.
"""

import itertools
import json
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError
from .util import index_from_uniform

# Hard cap on |S| * prod(|A_i|): dense tensors above this are a config error.
SIZE_GUARD = 10_000_000

ROW_SUM_TOL = 1e-12

JointAction = Tuple[int, ...]


def _readonly(arr):
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TabularMarkovGame:
    """Dense finite Markov game.

    transition: (S, A_1, ..., A_N, S) next-state distributions
    rewards:    (N, S, A_1, ..., A_N) per-agent immediate rewards
    discount:   shared discount factor in [0, 1)
    initial_dist: (S,) start-state distribution, uniform when omitted
    """

    transition: np.ndarray
    rewards: np.ndarray
    discount: float = 0.95
    initial_dist: Optional[np.ndarray] = None
    state_labels: Optional[Tuple[str, ...]] = None
    action_labels: Optional[Tuple[Tuple[str, ...], ...]] = None

    def __post_init__(self):
        trans = _readonly(self.transition)
        rew = _readonly(self.rewards)
        if trans.ndim < 3:
            raise ConfigError("transition tensor needs shape (S, A_1, ..., A_N, S)")
        if trans.shape[0] != trans.shape[-1]:
            raise ConfigError(
                f"transition state axes disagree: {trans.shape[0]} vs {trans.shape[-1]}"
            )
        n_agents = trans.ndim - 2
        if rew.ndim != n_agents + 2:
            raise ConfigError(
                f"rewards must have shape (N, S, A_1, ..., A_N); got {rew.shape}"
            )
        if rew.shape[0] != n_agents or rew.shape[1:] != trans.shape[:-1]:
            raise ConfigError(
                f"rewards shape {rew.shape} inconsistent with transition {trans.shape}"
            )
        n_states = trans.shape[0]
        table_size = n_states
        for a in trans.shape[1:-1]:
            table_size *= a
        if table_size > SIZE_GUARD:
            raise ConfigError(
                f"state-action table has {table_size} cells, over the {SIZE_GUARD} guard"
            )
        if self.initial_dist is None:
            init = np.full(n_states, 1.0 / n_states)
        else:
            init = np.asarray(self.initial_dist, dtype=np.float64)
            if init.shape != (n_states,):
                raise ConfigError(f"initial_dist must have shape ({n_states},)")
        object.__setattr__(self, "transition", trans)
        object.__setattr__(self, "rewards", rew)
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "initial_dist", _readonly(init))
        if self.state_labels is not None:
            object.__setattr__(self, "state_labels", tuple(self.state_labels))
        if self.action_labels is not None:
            object.__setattr__(
                self, "action_labels", tuple(tuple(a) for a in self.action_labels)
            )

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_agents(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> Tuple[int, ...]:
        return tuple(self.transition.shape[1:-1])


def check_joint_action(game: TabularMarkovGame, joint) -> JointAction:
    """Validate one action index per agent, each within range."""
    joint = tuple(int(a) for a in joint)
    if len(joint) != game.n_agents:
        raise ConfigError(
            f"joint action has {len(joint)} entries for {game.n_agents} agents"
        )
    for i, (a, n) in enumerate(zip(joint, game.n_actions)):
        if not 0 <= a < n:
            raise ConfigError(f"agent {i} action {a} outside [0, {n})")
    return joint


def validate_game(game: TabularMarkovGame):
    """Numeric sanity checks. Returns a list of problems, empty when valid."""
    problems = []
    if not 0.0 <= game.discount < 1.0:
        problems.append(f"discount {game.discount} outside [0, 1)")
    trans = game.transition
    flat = trans.reshape(-1, game.n_states)
    sums = flat.sum(axis=1)
    bad = np.nonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)[0]
    for idx in bad[:20]:
        cell = np.unravel_index(idx, trans.shape[:-1])
        problems.append(f"transition row {cell} sums to {sums[idx]!r}")
    if len(bad) > 20:
        problems.append(f"... and {len(bad) - 20} more bad transition rows")
    if np.any(trans < 0.0):
        problems.append("transition tensor has negative entries")
    if not np.all(np.isfinite(game.rewards)):
        problems.append("rewards contain non-finite values")
    init = game.initial_dist
    if np.any(init < 0.0):
        problems.append("initial_dist has negative entries")
    elif abs(float(init.sum()) - 1.0) > ROW_SUM_TOL:
        problems.append(f"initial_dist sums to {float(init.sum())!r}")
    return problems


def checked(game: TabularMarkovGame) -> TabularMarkovGame:
    """Raise ConfigError if validate_game reports anything."""
    problems = validate_game(game)
    if problems:
        raise ConfigError("invalid game: " + "; ".join(problems))
    return game


def step(game: TabularMarkovGame, state: int, joint: JointAction, rng):
    """Sample the successor state with exactly one uniform draw.

    Returns (next_state, rewards) where rewards is the length-N vector of
    immediate rewards for the given state and joint action.
    """
    row = game.transition[(state,) + tuple(joint)]
    u = rng.random()
    nxt = index_from_uniform(u, row)
    rew = game.rewards[(slice(None), state) + tuple(joint)]
    return nxt, np.array(rew, dtype=np.float64)


def sample_initial_state(game: TabularMarkovGame, rng) -> int:
    u = rng.random()
    return index_from_uniform(u, game.initial_dist)


@dataclass(frozen=True)
class InducedMdp:
    """Single-agent MDP obtained by freezing everyone else's policy."""

    transition: np.ndarray  # (S, A_i, S)
    rewards: np.ndarray  # (S, A_i)
    discount: float

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


def single_agent_mdp(game: TabularMarkovGame, agent: int, policy_tables) -> InducedMdp:
    """Marginalize the other agents out exactly, no sampling.

    policy_tables[j] is an (S, A_j) stochastic matrix for each agent j;
    the entry for `agent` is ignored.
    """
    if not 0 <= agent < game.n_agents:
        raise ConfigError(f"agent index {agent} outside [0, {game.n_agents})")
    n_s = game.n_states
    n_a = game.n_actions[agent]
    others = [j for j in range(game.n_agents) if j != agent]
    trans = np.zeros((n_s, n_a, n_s))
    rew = np.zeros((n_s, n_a))
    for s in range(n_s):
        for joint in itertools.product(*(range(k) for k in game.n_actions)):
            w = 1.0
            for j in others:
                w *= float(policy_tables[j][s, joint[j]])
            if w == 0.0:
                continue
            a_i = joint[agent]
            trans[s, a_i] += w * game.transition[(s,) + joint]
            rew[s, a_i] += w * game.rewards[(agent, s) + joint]
    return InducedMdp(_readonly(trans), _readonly(rew), game.discount)


def matrix_game(payoffs, discount: float = 0.95, action_labels=None) -> TabularMarkovGame:
    """Single-state repeated game from per-agent payoff tensors.

    payoffs: array (N, A_1, ..., A_N). The lone state self-loops.
    """
    pay = np.asarray(payoffs, dtype=np.float64)
    n_agents = pay.ndim - 1
    if pay.shape[0] != n_agents:
        raise ConfigError(f"payoff tensor shape {pay.shape} is not (N, A_1, ..., A_N)")
    shape_a = pay.shape[1:]
    trans = np.ones((1,) + shape_a + (1,))
    rew = pay.reshape((n_agents, 1) + shape_a)
    return TabularMarkovGame(
        transition=trans,
        rewards=rew,
        discount=discount,
        initial_dist=np.array([1.0]),
        action_labels=action_labels,
    )


def game_from_dict(data) -> TabularMarkovGame:
    """Build a game from the JSON schema used by the CLI.

    Required keys: "transition", "rewards", "actions_per_agent", and
    "states" (a count or a list of labels). Optional: "discount",
    "initial_dist", "action_labels".
    """
    try:
        states = data["states"]
        actions = list(data["actions_per_agent"])
        trans = np.asarray(data["transition"], dtype=np.float64)
        rew = np.asarray(data["rewards"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad game definition: {exc}") from exc
    if isinstance(states, int):
        n_states, labels = states, None
    else:
        labels = tuple(str(s) for s in states)
        n_states = len(labels)
    expected = (n_states,) + tuple(int(a) for a in actions) + (n_states,)
    if trans.shape != expected:
        raise ConfigError(f"transition shape {trans.shape}, expected {expected}")
    game = TabularMarkovGame(
        transition=trans,
        rewards=rew,
        discount=float(data.get("discount", 0.95)),
        initial_dist=data.get("initial_dist"),
        state_labels=labels,
        action_labels=data.get("action_labels"),
    )
    return checked(game)


def load_game(path) -> TabularMarkovGame:
    with open(path, "r", encoding="utf-8") as fh:
        return game_from_dict(json.load(fh))
