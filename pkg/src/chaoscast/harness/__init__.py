"""Configuration, persistence, experiment orchestration and the command line."""

from .bundle import load_bundle, read_bundle, save_bundle
from .config import ExperimentConfig, load_config, parse_text
from .experiment import RunReport, grid_search, run_experiment

__all__ = [
    "ExperimentConfig",
    "RunReport",
    "grid_search",
    "load_bundle",
    "load_config",
    "parse_text",
    "read_bundle",
    "run_experiment",
    "save_bundle",
]
