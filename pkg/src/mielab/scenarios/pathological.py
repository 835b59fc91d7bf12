"""Self-maintaining maladaptive equilibria in two-armed bandits.

Both variants have action 0 = the safe/avoidant arm and action 1 = the
world-engaging arm, with a scalar belief about the engaging arm.

depression: evidence about the engaging arm arrives every tick but is
discounted by a pessimistic bias before being absorbed, so the belief
settles at max(E[o] - beta_bias, 0) below the true value and the agent
withdraws even though engaging pays more.

anxiety: the threat belief updates only on ticks where the agent actually
approaches. Under pure avoidance the belief never moves, which certifies
the avoidance equilibrium: the policy blocks exactly the evidence that
would correct the belief.
"""

import numpy as np

from ..agents import (
    AgentSpec,
    BehavioralOp,
    BeliefState,
    MultilevelAgentState,
    NeuralParams,
    Observation,
    Policy,
    PullCognitive,
)
from ..errors import ConfigError
from ..games import TabularMarkovGame
from ..util import stable_softmax
from .base import Scenario

VARIANTS = ("depression", "anxiety")


class BelievedValueBehavioral(BehavioralOp):
    """Smooth best response to [fixed_value, intercept + slope * belief]."""

    def __init__(self, fixed_value: float, intercept: float, slope: float):
        self.fixed_value = float(fixed_value)
        self.intercept = float(intercept)
        self.slope = float(slope)

    def logits(self, belief) -> np.ndarray:
        b = float(belief.mean[0])
        return np.array([self.fixed_value, self.intercept + self.slope * b])

    def refresh(self, policy, theta, belief):
        from dataclasses import replace

        row = stable_softmax(self.logits(belief), policy.beta)
        return replace(policy, table=row[None, :])


class PathologicalScenario(Scenario):
    kind = "pathological"

    def __init__(
        self,
        variant: str,
        true_prob: float = None,
        beta_bias: float = 0.5,
        gamma_b: float = 0.1,
        belief0: float = None,
        beta: float = None,
        safe_value: float = None,
        threat_cost: float = 2.0,
        approach_gain: float = 1.0,
    ):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown pathological variant {variant!r}")
        self.variant = variant
        if variant == "depression":
            self.true_prob = 0.8 if true_prob is None else float(true_prob)
            self.belief0 = 0.5 if belief0 is None else float(belief0)
            self.beta = 50.0 if beta is None else float(beta)
            self.safe_value = 0.4 if safe_value is None else float(safe_value)
        else:
            self.true_prob = 0.1 if true_prob is None else float(true_prob)
            self.belief0 = 0.9 if belief0 is None else float(belief0)
            # high default beta makes avoidance exact: the approach logit
            # underflows to probability 0.0 and the belief stays bit-constant
            self.beta = 2000.0 if beta is None else float(beta)
            self.safe_value = 0.0 if safe_value is None else float(safe_value)
        if not 0.0 <= self.true_prob <= 1.0:
            raise ConfigError("true_prob must lie in [0, 1]")
        if not 0.0 <= self.belief0 <= 1.0:
            raise ConfigError("belief0 must lie in [0, 1]")
        if not 0.0 < gamma_b <= 1.0:
            raise ConfigError("gamma_b must lie in (0, 1]")
        self.beta_bias = float(beta_bias)
        self.gamma_b = float(gamma_b)
        self.threat_cost = float(threat_cost)
        self.approach_gain = float(approach_gain)
        self._game = self._build_game()

    @classmethod
    def from_config(cls, cfg: dict) -> "PathologicalScenario":
        keys = (
            "variant",
            "true_prob",
            "beta_bias",
            "gamma_b",
            "belief0",
            "beta",
            "safe_value",
            "threat_cost",
            "approach_gain",
        )
        return cls(**{k: cfg[k] for k in keys if k in cfg})

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "variant": self.variant,
            "true_prob": self.true_prob,
            "beta_bias": self.beta_bias,
            "gamma_b": self.gamma_b,
            "belief0": self.belief0,
            "beta": self.beta,
            "safe_value": self.safe_value,
            "threat_cost": self.threat_cost,
            "approach_gain": self.approach_gain,
        }

    def engage_value(self) -> float:
        """True expected reward of the engaging arm."""
        if self.variant == "depression":
            return self.true_prob
        return self.approach_gain - self.threat_cost * self.true_prob

    def _build_game(self) -> TabularMarkovGame:
        rewards = np.array([[[self.safe_value, self.engage_value()]]])
        return TabularMarkovGame(
            transition=np.ones((1, 2, 1)),
            rewards=rewards,
            discount=0.95,
            initial_dist=np.array([1.0]),
            action_labels=(
                ("withdraw", "engage") if self.variant == "depression" else ("avoid", "approach"),
            ),
        )

    @property
    def game(self) -> TabularMarkovGame:
        return self._game

    def behavioral_op(self) -> BelievedValueBehavioral:
        if self.variant == "depression":
            return BelievedValueBehavioral(self.safe_value, 0.0, 1.0)
        return BelievedValueBehavioral(
            self.safe_value, self.approach_gain, -self.threat_cost
        )

    def cognitive_op(self) -> PullCognitive:
        if self.variant == "depression":
            return PullCognitive(
                rate=self.gamma_b, bias=self.beta_bias, clamp_nonneg=True, source="signal"
            )
        return PullCognitive(rate=self.gamma_b, gate_action=1, source="signal")

    def agent_specs(self):
        belief = BeliefState(kind="gaussian", mean=np.array([self.belief0]), depth=1)
        behavioral = self.behavioral_op()
        policy = Policy(
            kind="tabular",
            table=stable_softmax(behavioral.logits(belief), self.beta)[None, :],
            beta=self.beta,
        )
        return [
            AgentSpec(
                state=MultilevelAgentState(
                    theta=NeuralParams(values=np.zeros(0), alpha=0.0),
                    belief=belief,
                    policy=policy,
                ),
                cognitive=self.cognitive_op(),
                behavioral=behavioral,
            )
        ]

    def observe(self, t, s, actions, rewards, s_next, states, exo):
        # evidence stream about the engaging arm's true statistics
        return [
            Observation(
                s, s_next, actions[0], (), float(rewards[0]), signal=self.true_prob
            )
        ]

    def belief_fixed_point(self) -> float:
        """Where the biased pull settles (depression variant)."""
        return max(self.true_prob - self.beta_bias, 0.0)


def build_pathological(variant: str, **kw) -> PathologicalScenario:
    return PathologicalScenario(variant=variant, **kw)
