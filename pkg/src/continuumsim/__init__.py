"""Deterministic benchmark simulator for a three-tier edge-cloud continuum."""

from .domain import (
    LinkParams,
    ScenarioConfig,
    StageDurations,
    TimeMode,
    TransportKind,
    config_from_json,
    config_to_json,
    validate_config,
)
from .nodes import RunResult, run_scenario
from .presets import PRESET_NAMES, base_config, build_preset

__all__ = [
    "LinkParams",
    "PRESET_NAMES",
    "RunResult",
    "ScenarioConfig",
    "StageDurations",
    "TimeMode",
    "TransportKind",
    "base_config",
    "build_preset",
    "config_from_json",
    "config_to_json",
    "run_scenario",
    "validate_config",
]
