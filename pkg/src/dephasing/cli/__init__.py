"""Command-line experiment harness."""

from .config import ConfigError, ExperimentConfig, FitSpec, GridSpec, load_config, preset
from .runner import RunManifest, compare, run

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "FitSpec",
    "GridSpec",
    "RunManifest",
    "compare",
    "load_config",
    "preset",
    "run",
]
