"""Bundled scenarios and the kind-keyed registry used by configs and logs."""

from ..errors import ConfigError
from .base import Scenario
from .bmi import BmiCoAdaptScenario, build_bmi_coadapt
from .highway import HighwayMergeScenario, build_highway_merge
from .matrix_games import (
    NASH_PROFILES,
    PAYOFFS,
    MatrixGameScenario,
    build_matrix_game,
)
from .pathological import PathologicalScenario, build_pathological
from .toy import ToyCoAdapt, toy_contraction_factor, toy_step

KINDS = {
    ToyCoAdapt.kind: ToyCoAdapt,
    MatrixGameScenario.kind: MatrixGameScenario,
    HighwayMergeScenario.kind: HighwayMergeScenario,
    BmiCoAdaptScenario.kind: BmiCoAdaptScenario,
    PathologicalScenario.kind: PathologicalScenario,
}


def make_scenario(cfg: dict) -> Scenario:
    """Build a scenario from a config mapping with a 'kind' discriminator."""
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ConfigError("scenario config must be a mapping with a 'kind' key")
    kind = cfg["kind"]
    if kind not in KINDS:
        known = ", ".join(sorted(KINDS))
        raise ConfigError(f"unknown scenario kind {kind!r} (known: {known})")
    return KINDS[kind].from_config(cfg)


__all__ = [
    "Scenario",
    "ToyCoAdapt",
    "MatrixGameScenario",
    "HighwayMergeScenario",
    "BmiCoAdaptScenario",
    "PathologicalScenario",
    "toy_step",
    "toy_contraction_factor",
    "build_matrix_game",
    "build_highway_merge",
    "build_bmi_coadapt",
    "build_pathological",
    "make_scenario",
    "PAYOFFS",
    "NASH_PROFILES",
    "KINDS",
]
