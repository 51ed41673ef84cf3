"""
Seeded synthetic charging-event streams.

Arrivals per station and hour follow a Poisson process whose rate has a daily
and a weekly sinusoidal component.  Each arrival becomes one charging event in
the event-file format, so the generator exercises the same ingestion and
resampling path as real data.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Union

import numpy as np
import pandas as pd

from .data_pipeline import EVENT_COLUMNS, TIMESTAMP_FORMAT
from .errors import ParameterError

# rated power, mean session hours
_PROFILES = {
    "fast": (22.0, 0.75),
    "slow": (7.0, 3.0),
}


def generate_events(
    n_stations: int = 4,
    days: int = 90,
    seed: int = 0,
    kind: Literal["fast", "slow", "mixed"] = "fast",
    start: str = "2023-01-02",
    base_rate: float = 0.45,
) -> pd.DataFrame:
    """Return a DataFrame with the event-file columns, sorted by start time.

    ``kind="mixed"`` alternates fast and slow stations.
    """
    if n_stations < 1 or days < 1:
        raise ParameterError("need at least one station and one day")
    if kind not in ("fast", "slow", "mixed"):
        raise ParameterError(f"unknown station kind {kind!r}")
    rng = np.random.default_rng(seed)
    origin = pd.Timestamp(start, tz="UTC").floor("D")
    hours = np.arange(days * 24)
    hour_of_day = hours % 24
    day_of_week = (hours // 24 + origin.dayofweek) % 7

    rows = []
    for station in range(n_stations):
        station_kind = kind if kind != "mixed" else ("fast" if station % 2 == 0 else "slow")
        power, mean_hours = _PROFILES[station_kind]
        phase = 9.0 + 1.5 * station
        amplitude = 0.8 - 0.1 * (station % 3)
        daily = 1.0 + amplitude * np.sin(2.0 * np.pi * (hour_of_day - phase) / 24.0)
        weekly = 1.0 + 0.25 * np.sin(2.0 * np.pi * day_of_week / 7.0)
        rate = base_rate * (1.0 + 0.15 * station) * np.clip(daily, 0.0, None) * weekly
        arrivals = rng.poisson(rate)
        for hour, count in zip(hours[arrivals > 0], arrivals[arrivals > 0]):
            for _ in range(count):
                offset_h = hour + rng.random()
                duration_h = rng.gamma(2.0, mean_hours / 2.0)
                energy = power * duration_h * rng.uniform(0.6, 1.0)
                begin = origin + pd.Timedelta(seconds=round(offset_h * 3600.0))
                end = begin + pd.Timedelta(seconds=round(duration_h * 3600.0))
                rows.append(
                    (f"S{station + 1:02d}", power, begin, end, round(energy, 6))
                )

    frame = pd.DataFrame(rows, columns=list(EVENT_COLUMNS))
    frame = frame.sort_values(["start_time", "station_id"], kind="mergesort").reset_index(drop=True)
    return frame


def write_events(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = frame.copy()
    for column in ("start_time", "end_time"):
        out[column] = pd.to_datetime(out[column], utc=True).dt.strftime(TIMESTAMP_FORMAT)
    out.to_csv(path, index=False, lineterminator="\n")
    return path
