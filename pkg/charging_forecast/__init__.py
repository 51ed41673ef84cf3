"""
Charging-load forecasting for networks of EV charging stations.

The package turns charging-event logs into hourly per-station load series,
trains a multiscale graph + recurrent forecaster and a set of baselines on a
small reverse-mode autodiff engine, and scores them side by side.  Modules
can be imported directly from `charging_forecast` or used via the CLI runner.
"""

from .checkpoint import load_checkpoint, restore_forecaster, save_checkpoint
from .config import RunConfig, load_run_config
from .data_pipeline import (
    LoadSeries,
    ingest_events,
    load_events_as_series,
    prepare_splits,
    read_series_cache,
    resample_hourly,
    split_series,
    write_series_cache,
)
from .errors import ForecastError
from .evaluation import ForecastReport, compare_to_reference, compute_metrics, evaluate_forecaster, run_comparison
from .model import MstemConfig, MstemModel, mstem_forward, output_control
from .registry import build_forecaster
from .synthetic import generate_events
from .training import TrainConfig, train

__all__ = [
    "LoadSeries",
    "ingest_events",
    "load_events_as_series",
    "resample_hourly",
    "split_series",
    "prepare_splits",
    "read_series_cache",
    "write_series_cache",
    "generate_events",
    "MstemConfig",
    "MstemModel",
    "mstem_forward",
    "output_control",
    "build_forecaster",
    "TrainConfig",
    "train",
    "ForecastReport",
    "compute_metrics",
    "evaluate_forecaster",
    "run_comparison",
    "compare_to_reference",
    "save_checkpoint",
    "load_checkpoint",
    "restore_forecaster",
    "RunConfig",
    "load_run_config",
    "ForecastError",
]
