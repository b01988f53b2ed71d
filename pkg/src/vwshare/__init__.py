"""Peer-to-peer content sharing for virtual worlds, as a deterministic simulator."""
from .config import ConfigError, SimConfig, load_config, validate_config
from .engine import MetricsReport, Simulation, World, run

__all__ = ["ConfigError", "MetricsReport", "SimConfig", "Simulation", "World", "load_config", "run",
           "validate_config"]
__version__ = "0.1.0"
