"""Scenario-driven co-simulation engine and experiment harness."""

from .report import (plot_data_series, read_report, read_trace, replay_metrics,
                     write_report, write_trace)
from .runner import run_experiment, run_scenario
from .scenario import (Scenario, ScenarioError, load_scenario, parse_scenario,
                       scenario_from_yaml)
from .world import InfeasibleRunError, RunTrace, World

__all__ = [
    "plot_data_series", "read_report", "read_trace", "replay_metrics",
    "write_report", "write_trace", "run_experiment", "run_scenario",
    "Scenario", "ScenarioError", "load_scenario", "parse_scenario",
    "scenario_from_yaml", "InfeasibleRunError", "RunTrace", "World",
]
