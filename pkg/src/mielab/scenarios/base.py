"""Scenario protocol: a game plus wired multilevel agents.

A scenario owns everything the engine needs for one run: the game tensors,
initial agent states with operator wiring, optional observation/reward
hooks, and the scalar time series it exposes for CSV export.
"""

from typing import List, Optional

from ..agents import AgentSpec, default_observations
from ..games import TabularMarkovGame


class Scenario:
    kind = "base"

    @property
    def game(self) -> TabularMarkovGame:
        raise NotImplementedError

    def agent_specs(self) -> List[AgentSpec]:
        """Fresh initial agent states and operators (pure builder)."""
        raise NotImplementedError

    def config(self) -> dict:
        """JSON-able config that rebuilds this scenario (kind included)."""
        raise NotImplementedError

    # hooks -----------------------------------------------------------------

    def exogenous(self, t: int, env_rng):
        """Per-tick exogenous draw from the environment stream, or None.

        Runs before any agent acts so the draw order is stable.
        """
        return None

    def observe(self, t, s, actions, rewards, s_next, states, exo):
        return default_observations(s, s_next, actions, rewards)

    def reward_hook(self, t, s, actions, rewards, s_next, states, exo):
        """Replace tensor rewards with level-dependent quantities, or None."""
        return None

    # reporting ---------------------------------------------------------------

    def series_columns(self, n_agents: int) -> List[str]:
        cols = ["t", "s"]
        cols += [f"a{i}" for i in range(n_agents)]
        cols += [f"r{i}" for i in range(n_agents)]
        return cols

    def series_row(self, record) -> list:
        return (
            [record["t"], record["s"]]
            + list(record["actions"])
            + list(record["rewards"])
        )
