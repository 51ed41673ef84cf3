"""
Utility helpers shared by the forecasting package and the command-line runner.
"""

from .env_loader import environment_overrides, load_env, merged_settings, read_config_file
from .tracing import Tracer

__all__ = [
    "load_env",
    "read_config_file",
    "environment_overrides",
    "merged_settings",
    "Tracer",
]
