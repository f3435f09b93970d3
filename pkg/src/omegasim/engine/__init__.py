"""Scenario language, simulation loop and run analyses."""

from .analysis import (
    BehaviorReport,
    BudgetOutcome,
    analyze,
    behavior_metrics,
    dwell_bfs,
    reachability_experiment,
    safety_report,
    system_hazard_key,
)
from .batch import BatchOutput, run_batch
from .dsl import Scenario, load_scenario, parse_scenario, serialize
from .sim import LEDGER_HEADER, TRACE_HEADER, Engine, RunResult, RunSummary, Trace, run
from .world import World, build_world

__all__ = [
    "BatchOutput",
    "BehaviorReport",
    "BudgetOutcome",
    "Engine",
    "RunResult",
    "RunSummary",
    "Scenario",
    "LEDGER_HEADER",
    "TRACE_HEADER",
    "Trace",
    "World",
    "analyze",
    "behavior_metrics",
    "build_world",
    "dwell_bfs",
    "load_scenario",
    "parse_scenario",
    "reachability_experiment",
    "run",
    "run_batch",
    "safety_report",
    "serialize",
    "system_hazard_key",
]
