"""mielab: coupled neural/cognitive/behavioral dynamics in tabular Markov games.

Agents carry three levels that co-evolve while they interact: slow
parameters theta, beliefs b, and a materialized policy pi. The package
provides the coupled simulation engine, equilibrium certification and
stability analysis for the joint process, an estimation toolbox for
recorded runs, and a CLI.
"""

from .agents import (
    AgentSpec,
    BeliefState,
    LearningSignal,
    MultilevelAgentState,
    NeuralParams,
    Observation,
    OperatorSchedule,
    Policy,
    belief_update_F,
    joint_step_Phi,
    neural_update_G,
    policy_refresh_H,
    smooth_best_response,
)
from .engine import (
    InteractionLog,
    PerturbationSpec,
    ReplayResult,
    RunConfig,
    apply_perturbation,
    export_series_csv,
    replay,
    rollout,
    rollout_with_perturbation,
)
from .errors import ConfigError, DataError, MielabError, NumericalError
from .games import TabularMarkovGame, game_from_dict, load_game, matrix_game, validate_game
from .scenarios import make_scenario

__version__ = "0.1.0"

__all__ = [
    "AgentSpec",
    "BeliefState",
    "ConfigError",
    "DataError",
    "InteractionLog",
    "LearningSignal",
    "MielabError",
    "MultilevelAgentState",
    "NeuralParams",
    "NumericalError",
    "Observation",
    "OperatorSchedule",
    "PerturbationSpec",
    "Policy",
    "ReplayResult",
    "RunConfig",
    "TabularMarkovGame",
    "apply_perturbation",
    "belief_update_F",
    "export_series_csv",
    "game_from_dict",
    "joint_step_Phi",
    "load_game",
    "make_scenario",
    "matrix_game",
    "neural_update_G",
    "policy_refresh_H",
    "replay",
    "rollout",
    "rollout_with_perturbation",
    "smooth_best_response",
    "validate_game",
    "__version__",
]
