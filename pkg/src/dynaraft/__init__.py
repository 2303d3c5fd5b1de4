"""Raft with measurement-driven election timing in a deterministic simulator."""

from dynaraft.harness import (
    Fault,
    RepResult,
    ScenarioResult,
    ScenarioSpec,
    VariantSpec,
    VARIANTS,
    random_scenario,
    run_scenario,
    summarize,
)
from dynaraft.presets import list_presets, load_preset
from dynaraft.raft import RaftConfig, RaftServer, Role
from dynaraft.reports import write_outputs
from dynaraft.scenario import ScenarioError, load_scenario, parse_scenario, spec_to_doc
from dynaraft.simnet import LinkProfile, Segment, Simulation
from dynaraft.tuner import (
    MeasurementWindow,
    TunerConfig,
    TuningOutput,
    evaluate,
    required_heartbeat_count,
)

__version__ = "0.1.0"

__all__ = [
    "Fault",
    "LinkProfile",
    "MeasurementWindow",
    "RaftConfig",
    "RaftServer",
    "RepResult",
    "Role",
    "ScenarioError",
    "ScenarioResult",
    "ScenarioSpec",
    "Segment",
    "Simulation",
    "TunerConfig",
    "TuningOutput",
    "VARIANTS",
    "VariantSpec",
    "evaluate",
    "list_presets",
    "load_preset",
    "load_scenario",
    "parse_scenario",
    "random_scenario",
    "required_heartbeat_count",
    "run_scenario",
    "spec_to_doc",
    "summarize",
    "write_outputs",
]
