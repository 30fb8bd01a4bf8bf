"""Configuration, initial data, file formats and the command-line entry points."""

from .config import ConfigError, RunConfig, load_config
from .initial import InitialDataSpec, build_initial

__all__ = ["ConfigError", "RunConfig", "load_config", "InitialDataSpec", "build_initial"]
