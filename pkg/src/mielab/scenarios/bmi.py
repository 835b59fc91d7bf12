"""Scalar co-adaptive interface: brain-side and machine-side biases.

The brain encodes an intended target tau_t (drawn +-1) as activity
n_t = tau_t + e; the machine decodes a command u_t = n_t + d. Both sides
descend the squared tracking error (u_t - tau_t)^2 = v^2 with v = e + d,
the brain over e at rate alpha_h and the machine over d at rate alpha_m.
Updates alternate: the brain adapts on even ticks, the machine on odd
ticks, so one full cycle multiplies v by (1 - c_h*alpha_h)*(1 - c_m*alpha_m)
with constants c_h = c_m = 2. Fixed points form the line e + d = 0.
"""

import numpy as np

from ..agents import (
    AgentSpec,
    BeliefState,
    LearningSignal,
    MultilevelAgentState,
    NeuralParams,
    Observation,
    OperatorSchedule,
    Policy,
    SignalNeural,
)
from ..errors import ConfigError
from ..games import TabularMarkovGame
from .base import Scenario

C_BRAIN = 2.0
C_MACHINE = 2.0


class BmiCoAdaptScenario(Scenario):
    kind = "bmi"
    decoder_agent = 1

    def __init__(self, alpha_h=0.2, alpha_m=0.01, e0=1.0, d0=0.5, noise=0.0):
        if alpha_h < 0.0 or alpha_m < 0.0:
            raise ConfigError("adaptation rates must be >= 0")
        if noise < 0.0:
            raise ConfigError("noise must be >= 0")
        self.alpha_h = float(alpha_h)
        self.alpha_m = float(alpha_m)
        self.e0 = float(e0)
        self.d0 = float(d0)
        self.noise = float(noise)
        self._game = TabularMarkovGame(
            transition=np.ones((1, 1, 1, 1)),
            rewards=np.zeros((2, 1, 1, 1)),
            discount=0.95,
            initial_dist=np.array([1.0]),
        )

    @classmethod
    def from_config(cls, cfg: dict) -> "BmiCoAdaptScenario":
        keys = ("alpha_h", "alpha_m", "e0", "d0", "noise")
        return cls(**{k: cfg[k] for k in keys if k in cfg})

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "alpha_h": self.alpha_h,
            "alpha_m": self.alpha_m,
            "e0": self.e0,
            "d0": self.d0,
            "noise": self.noise,
        }

    @property
    def game(self) -> TabularMarkovGame:
        return self._game

    def agent_specs(self):
        lone_policy = Policy(kind="tabular", table=np.array([[1.0]]))
        flat_belief = BeliefState(kind="gaussian", mean=np.zeros(1), depth=1)

        def side(value, rate, phase):
            return AgentSpec(
                state=MultilevelAgentState(
                    theta=NeuralParams(values=np.array([value]), alpha=rate),
                    belief=flat_belief,
                    policy=lone_policy,
                ),
                neural=SignalNeural(),
                neural_schedule=OperatorSchedule(period=2, phase=phase),
            )

        return [side(self.e0, self.alpha_h, 0), side(self.d0, self.alpha_m, 1)]

    def exogenous(self, t, env_rng):
        tau = 1.0 if env_rng.random() < 0.5 else -1.0
        eps = env_rng.standard_normal() if self.noise > 0.0 else 0.0
        return tau, eps

    def mismatch(self, states) -> float:
        return float(states[0].theta.values[0]) + float(states[1].theta.values[0])

    def observe(self, t, s, actions, rewards, s_next, states, exo):
        tau, eps = exo
        # tau^2 = 1, so the gradient of (v*tau)^2 in each bias is exactly 2v
        v = self.mismatch(states) + self.noise * eps
        grad = LearningSignal(delta=-2.0 * v, index=0)
        return [
            Observation(s, s_next, actions[0], (actions[1],), float(rewards[0]), signal=grad),
            Observation(s, s_next, actions[1], (actions[0],), float(rewards[1]), signal=grad),
        ]

    def reward_hook(self, t, s, actions, rewards, s_next, states, exo):
        v = self.mismatch(states)
        return [-(v * v), -(v * v)]

    def series_columns(self, n_agents):
        return ["t", "v", "tracking_error"]

    def series_row(self, record):
        v = -0.5 * record["obs"][0]["signal"]["delta"]
        return [record["t"], v, -record["rewards"][0]]

    # analytic references ------------------------------------------------------

    def cycle_factor(self) -> float:
        """Mismatch multiplier over one brain+machine update cycle."""
        return (1.0 - C_BRAIN * self.alpha_h) * (1.0 - C_MACHINE * self.alpha_m)

    def stable(self) -> bool:
        return abs(self.cycle_factor()) < 1.0

    def reference_mismatch(self, horizon: int) -> np.ndarray:
        """v_t from the exact alternating recursion (noise-free)."""
        v = self.e0 + self.d0
        out = np.empty(horizon + 1)
        out[0] = v
        for t in range(horizon):
            rate = self.alpha_h if t % 2 == 0 else self.alpha_m
            c = C_BRAIN if t % 2 == 0 else C_MACHINE
            v = v - rate * (c * v)
            out[t + 1] = v
        return out


def build_bmi_coadapt(**kw) -> BmiCoAdaptScenario:
    return BmiCoAdaptScenario(**kw)
