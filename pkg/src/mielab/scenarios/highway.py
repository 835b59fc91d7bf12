"""Merge negotiation between a ramp vehicle and a lane vehicle.

Agent 0 drives down a ramp of length `ramp_len` toward the merge point;
agent 1 circulates in the target lane with period `lane_len`. Both choose
moves brake/hold/accelerate (0/1/2 cells per tick). The ramp vehicle merges
when it crosses the merge point; if the lane vehicle reaches or passes the
merge point on the same tick the result is a collision. Merged and collided
are absorbing with zero further reward.

Rewards per live tick: time_cost for both, plus merge_reward to both on a
merge and collision_penalty to both on a collision. With slip > 0 a move
downgrades by one cell independently per vehicle; reward entries then carry
the outcome bonuses in expectation so r stays a function of (s, actions).
"""

import itertools

import numpy as np

from ..agents import (
    AgentSpec,
    BeliefState,
    FrequencyCognitive,
    MultilevelAgentState,
    NeuralParams,
    Policy,
    QLearningNeural,
    SoftmaxQBehavioral,
)
from ..errors import ConfigError
from ..games import TabularMarkovGame
from ..util import stable_softmax
from .base import Scenario

MOVES = (0, 1, 2)  # brake, hold, accelerate


class HighwayMergeScenario(Scenario):
    kind = "highway"

    def __init__(
        self,
        ramp_len: int = 4,
        lane_len: int = 3,
        slip: float = 0.0,
        merge_reward: float = 1.0,
        collision_penalty: float = -10.0,
        time_cost: float = -0.01,
        beta: float = 5.0,
        alpha: float = 0.1,
        gamma: float = 0.95,
    ):
        if ramp_len < 2 or lane_len < 2:
            raise ConfigError("ramp_len and lane_len must be >= 2")
        if not 0.0 <= slip < 1.0:
            raise ConfigError("slip must lie in [0, 1)")
        self.ramp_len = int(ramp_len)
        self.lane_len = int(lane_len)
        self.slip = float(slip)
        self.merge_reward = float(merge_reward)
        self.collision_penalty = float(collision_penalty)
        self.time_cost = float(time_cost)
        self.beta = float(beta)
        self.alpha = float(alpha)
        self.gamma = float(gamma)
        self._game = self._build_game()

    @classmethod
    def from_config(cls, cfg: dict) -> "HighwayMergeScenario":
        keys = (
            "ramp_len",
            "lane_len",
            "slip",
            "merge_reward",
            "collision_penalty",
            "time_cost",
            "beta",
            "alpha",
            "gamma",
        )
        return cls(**{k: cfg[k] for k in keys if k in cfg})

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "ramp_len": self.ramp_len,
            "lane_len": self.lane_len,
            "slip": self.slip,
            "merge_reward": self.merge_reward,
            "collision_penalty": self.collision_penalty,
            "time_cost": self.time_cost,
            "beta": self.beta,
            "alpha": self.alpha,
            "gamma": self.gamma,
        }

    # state indexing ---------------------------------------------------------

    def live_state(self, ramp_pos: int, lane_pos: int) -> int:
        return ramp_pos * self.lane_len + lane_pos

    @property
    def merged_state(self) -> int:
        return self.ramp_len * self.lane_len

    @property
    def collided_state(self) -> int:
        return self.ramp_len * self.lane_len + 1

    @property
    def n_states(self) -> int:
        return self.ramp_len * self.lane_len + 2

    def _outcomes(self, ramp_pos, lane_pos, mv_h, mv_a):
        """Successor state and outcome flag for realized moves."""
        crossing = mv_h >= 1 and ramp_pos - mv_h <= 0
        occupied = lane_pos - mv_a <= 0
        if crossing:
            return (self.collided_state, "collision") if occupied else (self.merged_state, "merge")
        nxt_ramp = ramp_pos - mv_h if mv_h >= 1 else ramp_pos
        nxt_lane = (lane_pos - mv_a) % self.lane_len
        return self.live_state(nxt_ramp, nxt_lane), None

    def _build_game(self) -> TabularMarkovGame:
        n_s = self.n_states
        trans = np.zeros((n_s, 3, 3, n_s))
        rewards = np.zeros((2, n_s, 3, 3))
        for term in (self.merged_state, self.collided_state):
            trans[term, :, :, term] = 1.0
        slip = self.slip
        move_dist = {m: [(m, 1.0 - slip), (max(m - 1, 0), slip)] if slip else [(m, 1.0)] for m in MOVES}
        for rp in range(self.ramp_len):
            for lp in range(self.lane_len):
                s = self.live_state(rp, lp)
                for a_h, a_a in itertools.product(MOVES, MOVES):
                    for (mh, ph), (ma, pa) in itertools.product(move_dist[a_h], move_dist[a_a]):
                        p = ph * pa
                        if p == 0.0:
                            continue
                        nxt, outcome = self._outcomes(rp, lp, mh, ma)
                        trans[s, a_h, a_a, nxt] += p
                        bonus = 0.0
                        if outcome == "merge":
                            bonus = self.merge_reward
                        elif outcome == "collision":
                            bonus = self.collision_penalty
                        rewards[:, s, a_h, a_a] += p * bonus
                    rewards[:, s, a_h, a_a] += self.time_cost
        init = np.zeros(n_s)
        init[self.live_state(self.ramp_len - 1, self.lane_len - 1)] = 1.0
        return TabularMarkovGame(
            transition=trans,
            rewards=rewards,
            discount=self.gamma,
            initial_dist=init,
            action_labels=(("brake", "hold", "accelerate"),) * 2,
        )

    @property
    def game(self) -> TabularMarkovGame:
        return self._game

    def agent_specs(self):
        n_s, n_a = self.n_states, 3
        uniform_q = np.zeros(n_s * n_a)
        table = np.empty((n_s, n_a))
        for s in range(n_s):
            table[s] = stable_softmax(uniform_q[s * n_a : (s + 1) * n_a], self.beta)
        specs = []
        for _ in range(2):
            specs.append(
                AgentSpec(
                    state=MultilevelAgentState(
                        theta=NeuralParams(values=uniform_q.copy(), alpha=self.alpha, shape=(n_s, n_a)),
                        belief=BeliefState(kind="categorical", probs=np.full(n_a, 1.0 / n_a), depth=1),
                        policy=Policy(kind="softmax_of_q", table=table.copy(), beta=self.beta),
                    ),
                    cognitive=FrequencyCognitive(prior_count=1.0),
                    neural=QLearningNeural(gamma=self.gamma),
                    behavioral=SoftmaxQBehavioral(),
                )
            )
        return specs

    def reaches_merge(self, policy_moves=(2, 0), max_ticks: int = 100) -> bool:
        """Deterministic reachability of the merged state under fixed moves.

        policy_moves = (ramp move, lane move); requires slip = 0.
        """
        if self.slip:
            raise ConfigError("reachability check needs deterministic dynamics")
        rp, lp = self.ramp_len - 1, self.lane_len - 1
        for _ in range(max_ticks):
            nxt, outcome = self._outcomes(rp, lp, policy_moves[0], policy_moves[1])
            if outcome == "merge":
                return True
            if outcome == "collision":
                return False
            rp, lp = nxt // self.lane_len, nxt % self.lane_len
        return False


def build_highway_merge(**kw) -> HighwayMergeScenario:
    return HighwayMergeScenario(**kw)
