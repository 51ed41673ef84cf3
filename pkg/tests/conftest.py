"""Shared fixtures: small deterministic series and paths to the bundled data."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from charging_forecast.data_pipeline import LoadSeries

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture
def sample_events_path() -> Path:
    return DATA_DIR / "sample_events.csv"


@pytest.fixture
def sample_series_path() -> Path:
    return DATA_DIR / "sample_series.csv"


def make_series(values: np.ndarray, start: str = "2024-01-01") -> LoadSeries:
    stations = tuple(f"S{i + 1:02d}" for i in range(values.shape[1]))
    return LoadSeries(stations=stations, start=pd.Timestamp(start, tz="UTC"), values=np.asarray(values, float))


def diurnal_values(hours: int, stations: int, seed: int = 0, noise: float = 0.3) -> np.ndarray:
    rng = np.random.default_rng(seed)
    t = np.arange(hours)[:, None]
    phase = np.arange(stations)[None, :]
    base = 5.0 + 4.0 * np.sin(2.0 * np.pi * (t - 2.0 * phase) / 24.0)
    return np.clip(base + noise * rng.standard_normal((hours, stations)), 0.0, None)


def periodic_values(hours: int, stations: int, period: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    cycle = rng.uniform(0.0, 10.0, size=(period, stations))
    reps = -(-hours // period)
    return np.tile(cycle, (reps, 1))[:hours]


@pytest.fixture
def diurnal_series() -> LoadSeries:
    """Fifteen days of hourly load at three stations."""
    return make_series(diurnal_values(360, 3))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
