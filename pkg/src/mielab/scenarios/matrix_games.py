"""Repeated 2x2 matrix games with co-learning multilevel agents.

Two learner kinds: "q" (tabular Q-values refreshed into a softmax policy)
and "fictitious" (empirical opponent frequency belief with a smooth best
response). Both track opponent action frequencies at the cognitive level.
"""

import numpy as np

from ..agents import (
    AgentSpec,
    BeliefState,
    FrequencyCognitive,
    MultilevelAgentState,
    NeuralParams,
    Policy,
    QLearningNeural,
    SmoothBRBehavioral,
    SoftmaxQBehavioral,
    smooth_best_response,
)
from ..errors import ConfigError
from ..games import TabularMarkovGame, matrix_game
from ..util import stable_softmax
from .base import Scenario

# payoff[i][a0, a1] for agent i; action indices are named per game below
PAYOFFS = {
    # actions: 0 = Heads, 1 = Tails; agent 0 wins on a match
    "matching_pennies": (
        np.array([[1.0, -1.0], [-1.0, 1.0]]),
        np.array([[-1.0, 1.0], [1.0, -1.0]]),
    ),
    # actions: 0 = Cooperate, 1 = Defect; T=5, R=3, P=1, S=0
    "prisoners_dilemma": (
        np.array([[3.0, 0.0], [5.0, 1.0]]),
        np.array([[3.0, 5.0], [0.0, 1.0]]),
    ),
    # actions: 0 = A, 1 = B; payoff 2 on the diagonal, 0 off it
    "coordination": (
        np.array([[2.0, 0.0], [0.0, 2.0]]),
        np.array([[2.0, 0.0], [0.0, 2.0]]),
    ),
}

NASH_PROFILES = {
    "matching_pennies": [(np.array([0.5, 0.5]), np.array([0.5, 0.5]))],
    "prisoners_dilemma": [(np.array([0.0, 1.0]), np.array([0.0, 1.0]))],
    "coordination": [
        (np.array([1.0, 0.0]), np.array([1.0, 0.0])),
        (np.array([0.0, 1.0]), np.array([0.0, 1.0])),
    ],
}


class MatrixGameScenario(Scenario):
    kind = "matrix"

    def __init__(
        self,
        name: str,
        learner: str = "q",
        beta: float = 5.0,
        alpha: float = 0.1,
        gamma: float = 0.95,
        prior_count: float = 1.0,
        q_init=None,
    ):
        if name not in PAYOFFS:
            raise ConfigError(f"unknown matrix game {name!r}")
        if learner not in ("q", "fictitious"):
            raise ConfigError(f"unknown learner kind {learner!r}")
        self.name = name
        self.learner = learner
        self.beta = float(beta)
        self.alpha = float(alpha)
        self.gamma = float(gamma)
        self.prior_count = float(prior_count)
        self.payoffs = PAYOFFS[name]
        n_a = self.payoffs[0].shape[0]
        if q_init is None:
            self.q_init = [np.zeros(n_a), np.zeros(n_a)]
        else:
            self.q_init = [np.asarray(q, dtype=np.float64).copy() for q in q_init]
            for q in self.q_init:
                if q.shape != (n_a,):
                    raise ConfigError(f"q_init rows must have length {n_a}")
        self._game = matrix_game(np.stack(self.payoffs), discount=self.gamma)

    @classmethod
    def from_config(cls, cfg: dict) -> "MatrixGameScenario":
        return cls(
            name=cfg["name"],
            learner=cfg.get("learner", "q"),
            beta=cfg.get("beta", 5.0),
            alpha=cfg.get("alpha", 0.1),
            gamma=cfg.get("gamma", 0.95),
            prior_count=cfg.get("prior_count", 1.0),
            q_init=cfg.get("q_init"),
        )

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "name": self.name,
            "learner": self.learner,
            "beta": self.beta,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "prior_count": self.prior_count,
            "q_init": [list(map(float, q)) for q in self.q_init],
        }

    @property
    def game(self) -> TabularMarkovGame:
        return self._game

    @property
    def n_actions(self) -> int:
        return self.payoffs[0].shape[0]

    def agent_specs(self):
        n_a = self.n_actions
        uniform = np.full(n_a, 1.0 / n_a)
        specs = []
        for i in range(2):
            # orient each payoff matrix as (own action, opponent action)
            own_payoff = self.payoffs[i] if i == 0 else self.payoffs[i].T
            belief = BeliefState(kind="categorical", probs=uniform, depth=1)
            if self.learner == "q":
                theta = NeuralParams(
                    values=self.q_init[i].copy(), alpha=self.alpha, shape=(1, n_a)
                )
                policy = Policy(
                    kind="softmax_of_q",
                    table=stable_softmax(self.q_init[i], self.beta)[None, :],
                    beta=self.beta,
                )
                neural = QLearningNeural(gamma=self.gamma)
                behavioral = SoftmaxQBehavioral()
            else:
                theta = NeuralParams(values=np.zeros(0), alpha=0.0)
                policy = Policy(
                    kind="tabular",
                    table=smooth_best_response(own_payoff, uniform, self.beta)[None, :],
                    beta=self.beta,
                )
                neural = None
                behavioral = SmoothBRBehavioral(own_payoff)
            specs.append(
                AgentSpec(
                    state=MultilevelAgentState(theta, belief, policy),
                    cognitive=FrequencyCognitive(prior_count=self.prior_count),
                    neural=neural,
                    behavioral=behavioral,
                )
            )
        return specs

    def kernel_params(self) -> dict:
        """Flat parameter bundle for the compiled co-learning loop."""
        return {
            "pay0": self.payoffs[0],
            "pay1": self.payoffs[1],
            "learner": self.learner,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "prior_count": self.prior_count,
            "q_init": [q.copy() for q in self.q_init],
        }


def build_matrix_game(name: str, learner: str = "q", beta: float = 5.0, alpha: float = 0.1, **kw):
    """Factory matching the scenario registry's call shape."""
    return MatrixGameScenario(name=name, learner=learner, beta=beta, alpha=alpha, **kw)
