"""Scenario-driven simulation: synthetic streams, end-to-end runs, sweeps and reports."""

from .generate import generate_frame, generate_stream
from .runner import RunResult, SweepSpec, emit_report, run_scenario, run_sweep
from .scenario import Scenario, load_scenario, parse_scenario

__all__ = [
    "RunResult",
    "Scenario",
    "SweepSpec",
    "emit_report",
    "generate_frame",
    "generate_stream",
    "load_scenario",
    "parse_scenario",
    "run_scenario",
    "run_sweep",
]
