"""Experiment configuration, orchestration, result tables and the CLI."""

from .config import EXPERIMENTS, ConfigError, ExperimentConfig, defaults_for, parse_set
from .results import ResultRow, ResultsTable, emit_csv, emit_plotdata, read_csv, read_plotdata

__all__ = [
    "EXPERIMENTS", "ConfigError", "ExperimentConfig", "ResultRow", "ResultsTable", "defaults_for",
    "emit_csv", "emit_plotdata", "parse_set", "read_csv", "read_plotdata", "run_experiment",
]


def run_experiment(cfg, progress=None):
    from .experiments import run_experiment as _run

    return _run(cfg, progress)
