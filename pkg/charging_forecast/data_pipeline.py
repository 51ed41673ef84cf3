"""
Charging-event ingestion and hourly load series preparation.

Raw events (one row per charging session) are validated, filtered by connector
class, spread uniformly over their duration into hourly kW buckets, split
chronologically and cut into supervised windows.

Event file columns::

    station_id, connector_kw, start_time, end_time, energy_kwh

Hourly cache files hold a ``timestamp`` column followed by one column per
station, values in kW with six decimals.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .errors import ConfigurationError, ContractError, DataError, IngestionError, ParameterError

logger = logging.getLogger(__name__)

KindFilter = Literal["fast", "slow", "all"]
EVENT_COLUMNS = ("station_id", "connector_kw", "start_time", "end_time", "energy_kwh")
FAST_POWER_KW = 15.0
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)
MAX_REJECT_SHARE = 0.5
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"


class ChargingEvent(BaseModel):
    """One validated charging session."""

    model_config = ConfigDict(frozen=True)

    station_id: str
    connector_kw: float
    start_time: datetime
    end_time: datetime
    energy_kwh: float

    @field_validator("station_id")
    @classmethod
    def _station_present(cls, value: str) -> str:
        value = value.strip()
        if not value:
            raise ValueError("missing station id")
        return value

    @field_validator("start_time", "end_time")
    @classmethod
    def _as_utc(cls, value: datetime) -> datetime:
        if value.tzinfo is None:
            return value.replace(tzinfo=timezone.utc)
        return value.astimezone(timezone.utc)

    @model_validator(mode="after")
    def _check_invariants(self) -> "ChargingEvent":
        if self.end_time < self.start_time:
            raise ValueError("negative duration")
        if not math.isfinite(self.energy_kwh):
            raise ValueError("non-finite energy")
        if not math.isfinite(self.connector_kw):
            raise ValueError("non-finite connector power")
        if self.energy_kwh < 0:
            raise ValueError("negative energy")
        if self.connector_kw < 0:
            raise ValueError("negative connector power")
        return self

    @property
    def connector_kind(self) -> str:
        return "fast" if self.connector_kw >= FAST_POWER_KW else "slow"


@dataclass(frozen=True)
class RejectedRow:
    row: int
    reason: str


@dataclass
class IngestionReport:
    events: List[ChargingEvent]
    rejected: List[RejectedRow] = field(default_factory=list)
    excluded: int = 0

    @property
    def total_rows(self) -> int:
        return len(self.events) + len(self.rejected) + self.excluded


def _parse_timestamp(raw: str) -> datetime:
    stamp = pd.Timestamp(raw)
    if pd.isna(stamp):
        raise ValueError("empty timestamp")
    if stamp.tzinfo is None:
        stamp = stamp.tz_localize("UTC")
    return stamp.tz_convert("UTC").to_pydatetime()


def _row_reason(exc: Exception) -> str:
    if isinstance(exc, ValidationError):
        message = exc.errors()[0]["msg"]
        return message.removeprefix("Value error, ")
    return str(exc)


def ingest_events(
    source: Union[str, Path, IO[str], pd.DataFrame],
    kind_filter: KindFilter = "all",
) -> IngestionReport:
    """Read and validate charging events, keeping those matching ``kind_filter``.

    Rejected rows are reported with a reason.  More than half of the rows
    being rejected is treated as a broken file.
    """
    if kind_filter not in ("fast", "slow", "all"):
        raise ParameterError(f"unknown kind filter {kind_filter!r}")
    if isinstance(source, pd.DataFrame):
        frame = source.astype(str)
    else:
        try:
            frame = pd.read_csv(source, dtype=str, keep_default_na=False)
        except FileNotFoundError as exc:
            raise DataError(f"event file not found: {source}") from exc
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise DataError(f"cannot parse event file {source}: {exc}") from exc
    frame.columns = [str(c).strip() for c in frame.columns]
    missing = [c for c in EVENT_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"event file is missing columns: {', '.join(missing)}")

    report = IngestionReport(events=[])
    for row_number, row in enumerate(frame[list(EVENT_COLUMNS)].itertuples(index=False), start=1):
        try:
            try:
                start = _parse_timestamp(row.start_time)
                end = _parse_timestamp(row.end_time)
            except (ValueError, TypeError) as exc:
                raise ValueError("unparseable timestamp") from exc
            event = ChargingEvent(
                station_id=row.station_id,
                connector_kw=row.connector_kw,
                start_time=start,
                end_time=end,
                energy_kwh=row.energy_kwh,
            )
        except (ValueError, ValidationError) as exc:
            report.rejected.append(RejectedRow(row=row_number, reason=_row_reason(exc)))
            continue
        if kind_filter != "all" and event.connector_kind != kind_filter:
            report.excluded += 1
            continue
        report.events.append(event)

    considered = len(report.events) + len(report.rejected) + report.excluded
    if considered and len(report.rejected) / considered > MAX_REJECT_SHARE:
        raise IngestionError(
            f"{len(report.rejected)} of {considered} rows rejected; "
            f"first reason: {report.rejected[0].reason}"
        )
    if report.rejected:
        logger.warning("rejected %d of %d event rows", len(report.rejected), considered)
    return report


@dataclass(frozen=True)
class LoadSeries:
    """Hourly average load (kW) per station; row i is hour ``start + i``."""

    stations: Tuple[str, ...]
    start: pd.Timestamp
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != len(self.stations):
            raise ConfigurationError(
                f"load matrix {self.values.shape} does not match {len(self.stations)} stations"
            )

    @property
    def n_hours(self) -> int:
        return self.values.shape[0]

    @property
    def n_stations(self) -> int:
        return self.values.shape[1]

    @property
    def timestamps(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start, periods=self.n_hours, freq="h")

    @property
    def total_energy_kwh(self) -> float:
        return float(self.values.sum())

    def segment(self, begin: int, end: int) -> "LoadSeries":
        return LoadSeries(
            stations=self.stations,
            start=self.start + pd.Timedelta(hours=begin),
            values=self.values[begin:end].copy(),
        )


def _epoch_seconds(moment: datetime) -> float:
    return moment.timestamp()


def resample_hourly(
    events: Sequence[ChargingEvent], stations: Optional[Sequence[str]] = None
) -> LoadSeries:
    """Spread each event's energy uniformly over its duration into hour buckets.

    The kWh landing in an hour equals that hour's average load in kW.  A
    zero-duration event puts all of its energy into its start hour.
    """
    if not events:
        raise DataError("no charging events to resample (empty series)")
    if stations is None:
        stations = sorted({e.station_id for e in events})
    column = {station: i for i, station in enumerate(stations)}
    unknown = sorted({e.station_id for e in events} - column.keys())
    if unknown:
        raise ParameterError(f"stations list does not cover: {', '.join(unknown)}")

    first = min(_epoch_seconds(e.start_time) for e in events)
    origin = math.floor(first / 3600.0) * 3600.0
    spans = []
    n_hours = 1
    for event in events:
        s = _epoch_seconds(event.start_time) - origin
        e = _epoch_seconds(event.end_time) - origin
        h0 = int(s // 3600.0)
        h1 = max(int(math.ceil(e / 3600.0)), h0 + 1)
        spans.append((s, e, h0, h1))
        n_hours = max(n_hours, h1)

    values = np.zeros((n_hours, len(stations)))
    for event, (s, e, h0, h1) in zip(events, spans):
        col = column[event.station_id]
        if e <= s:
            values[h0, col] += event.energy_kwh
            continue
        edges = np.arange(h0, h1 + 1, dtype=np.float64) * 3600.0
        overlap = np.minimum(edges[1:], e) - np.maximum(edges[:-1], s)
        values[h0:h1, col] += event.energy_kwh * np.clip(overlap, 0.0, None) / (e - s)

    start = pd.Timestamp(origin, unit="s", tz="UTC")
    return LoadSeries(stations=tuple(stations), start=start, values=values)


def frame_to_text(
    frame: pd.DataFrame,
    metadata: Optional[Mapping[str, object]] = None,
    float_format: str = "%.6f",
) -> str:
    """CSV text for ``frame``, preceded by one ``# key=value`` line per metadata item."""
    header = "".join(f"# {key}={value}\n" for key, value in (metadata or {}).items())
    return header + frame.to_csv(index=False, float_format=float_format, lineterminator="\n")


def write_frame(
    frame: pd.DataFrame,
    path: Union[str, Path],
    metadata: Optional[Mapping[str, object]] = None,
    float_format: str = "%.6f",
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(frame_to_text(frame, metadata, float_format), encoding="utf-8")
    return path


def write_series_cache(series: LoadSeries, path: Union[str, Path]) -> Path:
    """Write the hourly series as delimited text (timestamp, one column per station)."""
    frame = pd.DataFrame(series.values, columns=list(series.stations))
    frame.insert(0, "timestamp", series.timestamps.strftime(TIMESTAMP_FORMAT))
    return write_frame(frame, path)


def read_series_cache(path: Union[str, Path]) -> LoadSeries:
    try:
        frame = pd.read_csv(path, dtype={"timestamp": str})
    except FileNotFoundError as exc:
        raise DataError(f"series cache not found: {path}") from exc
    if "timestamp" not in frame.columns or frame.shape[1] < 2:
        raise DataError(f"{path} is not a series cache (needs timestamp + station columns)")
    if frame.empty:
        raise DataError(f"{path} holds no hours")
    try:
        stamps = pd.to_datetime(frame["timestamp"], utc=True)
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: unparseable timestamp: {exc}") from exc
    gaps = stamps.diff().dropna() != pd.Timedelta(hours=1)
    if stamps.isna().any() or gaps.any():
        raise DataError(f"{path}: rows are not consecutive hours")
    try:
        values = frame.drop(columns="timestamp").to_numpy(dtype=np.float64)
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: non-numeric load value: {exc}") from exc
    if not np.isfinite(values).all() or (values < 0).any():
        raise DataError(f"{path}: load values must be finite and nonnegative")
    stations = tuple(str(c) for c in frame.columns if c != "timestamp")
    return LoadSeries(stations=stations, start=stamps.iloc[0], values=values)


@dataclass(frozen=True)
class SeriesSplits:
    train: LoadSeries
    val: LoadSeries
    test: LoadSeries

    def __iter__(self):
        return iter((self.train, self.val, self.test))


def split_series(
    series: LoadSeries,
    fractions: Sequence[float] = SPLIT_FRACTIONS,
    min_length: Optional[int] = None,
) -> SeriesSplits:
    """Chronological train/validation/test split at floor(f1·T) and floor((f1+f2)·T)."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions must be three nonnegative shares summing to 1: {fractions}")
    total = series.n_hours
    first = math.floor(fractions[0] * total + 1e-9)
    second = math.floor((fractions[0] + fractions[1]) * total + 1e-9)
    splits = SeriesSplits(
        train=series.segment(0, first),
        val=series.segment(first, second),
        test=series.segment(second, total),
    )
    if min_length is not None:
        for name, part in zip(("train", "validation", "test"), splits):
            if part.n_hours < min_length:
                raise ConfigurationError(
                    f"{name} segment has {part.n_hours} hours; needs at least {min_length} "
                    f"(lookback + horizon)"
                )
    return splits


@dataclass(frozen=True)
class WindowSample:
    """Lookback block (τ×N) and target block (α×N) starting at row ``origin``."""

    inputs: np.ndarray
    targets: np.ndarray
    origin: int


def window_arrays(
    values: np.ndarray, tau: int, alpha: int, stride: int = 1
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked windows as (B×τ×N inputs, B×α×N targets, origins)."""
    if tau < 1 or alpha < 1 or stride < 1:
        raise ParameterError(f"lookback, horizon and stride must be positive (got {tau}, {alpha}, {stride})")
    total, stations = values.shape
    count = total - tau - alpha + 1
    if count <= 0:
        logger.warning(
            "series of %d hours is too short for lookback %d + horizon %d; no windows", total, tau, alpha
        )
        return np.zeros((0, tau, stations)), np.zeros((0, alpha, stations)), np.zeros(0, dtype=int)
    origins = np.arange(0, count, stride)
    span = np.lib.stride_tricks.sliding_window_view(values, tau + alpha, axis=0)[origins]
    # sliding_window_view puts the window axis last: B×N×(τ+α)
    span = np.ascontiguousarray(span.transpose(0, 2, 1))
    return span[:, :tau, :].copy(), span[:, tau:, :].copy(), origins


def make_windows(series: Union[LoadSeries, np.ndarray], tau: int, alpha: int) -> List[WindowSample]:
    values = series.values if isinstance(series, LoadSeries) else np.asarray(series, dtype=np.float64)
    inputs, targets, origins = window_arrays(values, tau, alpha)
    return [WindowSample(inputs=x, targets=y, origin=int(o)) for x, y, o in zip(inputs, targets, origins)]


class Scaler:
    """Per-station standardization fit on the training segment."""

    STD_FLOOR = 1e-8

    def __init__(self) -> None:
        self.mean: Optional[np.ndarray] = None
        self.std: Optional[np.ndarray] = None

    @property
    def is_fit(self) -> bool:
        return self.mean is not None

    def fit(self, train: Union[LoadSeries, np.ndarray]) -> "Scaler":
        values = train.values if isinstance(train, LoadSeries) else np.asarray(train, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] == 0:
            raise ConfigurationError("scaler needs a nonempty T×N training matrix")
        self.mean = values.mean(axis=0)
        self.std = np.maximum(values.std(axis=0), self.STD_FLOOR)
        return self

    def apply(self, values: np.ndarray) -> np.ndarray:
        if not self.is_fit:
            raise ContractError("scaler used before fit")
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        if not self.is_fit:
            raise ContractError("scaler used before fit")
        return np.asarray(values, dtype=np.float64) * self.std + self.mean

    @classmethod
    def identity(cls, stations: int) -> "Scaler":
        scaler = cls()
        scaler.mean = np.zeros(stations)
        scaler.std = np.ones(stations)
        return scaler


def fit_apply_invert_scaler(train: LoadSeries, matrix: np.ndarray) -> Tuple[Scaler, np.ndarray, np.ndarray]:
    """Fit on ``train`` and return (scaler, standardized matrix, restored matrix)."""
    scaler = Scaler().fit(train)
    standardized = scaler.apply(matrix)
    return scaler, standardized, scaler.invert(standardized)


@dataclass(frozen=True)
class WindowSet:
    """Stacked windows of one split: standardized inputs/targets plus raw kW targets."""

    inputs: np.ndarray
    targets: np.ndarray
    raw_targets: np.ndarray
    origins: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class PreparedData:
    """Chronological splits of one series with the scaler fit on the training part."""

    series: LoadSeries
    splits: SeriesSplits
    scaler: Scaler

    def window_set(self, split: str, tau: int, alpha: int, stride: int = 1) -> WindowSet:
        part = getattr(self.splits, split)
        scaled = self.scaler.apply(part.values)
        inputs, targets, origins = window_arrays(scaled, tau, alpha, stride)
        _, raw_targets, _ = window_arrays(part.values, tau, alpha, stride)
        return WindowSet(inputs=inputs, targets=targets, raw_targets=raw_targets, origins=origins)


def prepare_splits(
    series: LoadSeries,
    tau: int,
    alpha: int,
    fractions: Sequence[float] = SPLIT_FRACTIONS,
    standardize: bool = True,
) -> PreparedData:
    splits = split_series(series, fractions, min_length=tau + alpha)
    scaler = Scaler().fit(splits.train) if standardize else Scaler.identity(series.n_stations)
    return PreparedData(series=series, splits=splits, scaler=scaler)


def load_events_as_series(
    source: Union[str, Path, IO[str], pd.DataFrame],
    kind_filter: KindFilter = "all",
) -> Tuple[LoadSeries, IngestionReport]:
    report = ingest_events(source, kind_filter)
    if not report.events:
        raise DataError(f"no {kind_filter} charging events in input (empty series)")
    return resample_hourly(report.events), report
