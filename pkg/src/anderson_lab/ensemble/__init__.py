"""Ensemble experiments: configuration, execution and reports."""

from .config import EXPERIMENTS, ExperimentConfig, load_config, parse_config
from .report import EnsembleReport, aggregate, fit_exponent, load_report, wilson_interval
from .runner import run_experiment, work_items

__all__ = [
    "EXPERIMENTS",
    "EnsembleReport",
    "ExperimentConfig",
    "aggregate",
    "fit_exponent",
    "load_config",
    "load_report",
    "parse_config",
    "run_experiment",
    "wilson_interval",
    "work_items",
]
