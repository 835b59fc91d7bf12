"""Two scalar co-adapting agents pulling their internal estimates together.

Agent 0 ("human") holds estimate x and moves it toward the partner's y at
rate 2*alpha_h; agent 1 ("machine") moves y toward x at rate alpha_m. Both
see utility U = 1 - (x - y)^2 evaluated before the updates. The mismatch
d = x - y contracts by the factor kappa = 1 - 2*alpha_h - alpha_m each tick,
so the whole system is a linear map with a fixed-point line x = y.
"""

import numpy as np

from ..agents import (
    AgentSpec,
    BeliefState,
    MultilevelAgentState,
    NeuralParams,
    Observation,
    Policy,
    PullCognitive,
)
from ..errors import ConfigError
from ..games import TabularMarkovGame
from .base import Scenario


def toy_step(x: float, y: float, alpha_h: float, alpha_m: float):
    """One exact update; returns (x', y', U) with U at the pre-update state."""
    d = x - y
    u = 1.0 - d * d
    return x - (2.0 * alpha_h) * d, y + alpha_m * d, u


def toy_contraction_factor(alpha_h: float, alpha_m: float):
    """Mismatch multiplier kappa and whether |kappa| < 1 (convergence)."""
    kappa = 1.0 - 2.0 * alpha_h - alpha_m
    return kappa, abs(kappa) < 1.0


def _unit_game() -> TabularMarkovGame:
    # one state, one action each; rewards are injected by the reward hook
    return TabularMarkovGame(
        transition=np.ones((1, 1, 1, 1)),
        rewards=np.zeros((2, 1, 1, 1)),
        discount=0.95,
        initial_dist=np.array([1.0]),
    )


class ToyCoAdapt(Scenario):
    kind = "toy"

    def __init__(self, alpha_h=0.2, alpha_m=0.3, x0=0.9, y0=0.1):
        if alpha_h <= 0.0 or alpha_m <= 0.0:
            raise ConfigError("adaptation rates must be positive")
        if not (0.0 <= x0 <= 1.0 and 0.0 <= y0 <= 1.0):
            raise ConfigError("initial estimates must lie in [0, 1]")
        self.alpha_h = float(alpha_h)
        self.alpha_m = float(alpha_m)
        self.x0 = float(x0)
        self.y0 = float(y0)
        self._game = _unit_game()

    @classmethod
    def from_config(cls, cfg: dict) -> "ToyCoAdapt":
        return cls(
            alpha_h=cfg.get("alpha_h", 0.2),
            alpha_m=cfg.get("alpha_m", 0.3),
            x0=cfg.get("x0", 0.9),
            y0=cfg.get("y0", 0.1),
        )

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "alpha_h": self.alpha_h,
            "alpha_m": self.alpha_m,
            "x0": self.x0,
            "y0": self.y0,
        }

    @property
    def game(self) -> TabularMarkovGame:
        return self._game

    def agent_specs(self):
        lone_policy = Policy(kind="tabular", table=np.array([[1.0]]))
        no_theta = NeuralParams(values=np.zeros(0), alpha=0.0)

        def agent(value, rate):
            return AgentSpec(
                state=MultilevelAgentState(
                    theta=no_theta,
                    belief=BeliefState(kind="gaussian", mean=np.array([value]), depth=1),
                    policy=lone_policy,
                ),
                cognitive=PullCognitive(rate=rate, source="signal"),
            )

        return [agent(self.x0, 2.0 * self.alpha_h), agent(self.y0, self.alpha_m)]

    def observe(self, t, s, actions, rewards, s_next, states, exo):
        # each side observes the partner's current estimate
        x = float(states[0].belief.mean[0])
        y = float(states[1].belief.mean[0])
        return [
            Observation(s, s_next, actions[0], (actions[1],), float(rewards[0]), signal=y),
            Observation(s, s_next, actions[1], (actions[0],), float(rewards[1]), signal=x),
        ]

    def reward_hook(self, t, s, actions, rewards, s_next, states, exo):
        d = float(states[0].belief.mean[0]) - float(states[1].belief.mean[0])
        u = 1.0 - d * d
        return [u, u]

    def series_columns(self, n_agents):
        return ["t", "x", "y", "U", "d"]

    def series_row(self, record):
        x = record["obs"][1]["signal"]
        y = record["obs"][0]["signal"]
        return [record["t"], x, y, record["rewards"][0], x - y]
