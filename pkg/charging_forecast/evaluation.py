"""
Scoring forecasts and assembling comparison reports.

``run_comparison`` coordinates one job per (model, horizon) pair the same
way a task orchestrator dispatches workers: each job trains (when the model
has parameters), scores the test windows and returns a row.  A failing job
keeps its error message in the row and the remaining jobs still run.
Jobs fan out over a bounded number of worker threads with ``asyncio``;
the report is assembled in model order afterwards, so the output does not
depend on which job finished first.
"""

from __future__ import annotations

import asyncio
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from rich.table import Table

from utils.tracing import Tracer

from .config import RunConfig
from .data_pipeline import LoadSeries, PreparedData, frame_to_text, prepare_splits, write_frame
from .errors import ConfigurationError, ContractError, DimensionError
from .model import Forecaster, output_control
from .registry import MODEL_ORDER, build_forecaster, display_name, is_trainable, normalize_tag
from .training import predict_windows, train

logger = logging.getLogger(__name__)

METRIC_NAMES = ("mse", "mae", "rmse")

# MSTEM scores on the public fast and slow charging benchmarks, in kW units.
PUBLISHED_REFERENCE: Dict[str, Dict[int, Dict[str, float]]] = {
    "fast": {
        6: {"mse": 22.33, "mae": 2.07, "rmse": 4.73},
        12: {"mse": 22.95, "mae": 2.15, "rmse": 4.79},
        24: {"mse": 22.61, "mae": 2.15, "rmse": 4.75},
    },
    "slow": {
        6: {"mse": 1.52, "mae": 0.45, "rmse": 1.23},
        12: {"mse": 1.66, "mae": 0.49, "rmse": 1.29},
        24: {"mse": 1.77, "mae": 0.50, "rmse": 1.33},
    },
}
REFERENCE_TOLERANCE = 0.30


@dataclass(frozen=True)
class MetricTriple:
    mse: float
    mae: float
    rmse: float

    def as_dict(self) -> Dict[str, float]:
        return {"mse": self.mse, "mae": self.mae, "rmse": self.rmse}


def compute_metrics(pred: np.ndarray, actual: np.ndarray) -> MetricTriple:
    """MSE, MAE and RMSE over every (window, step, station) cell."""
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape:
        raise DimensionError(f"prediction shape {pred.shape} does not match target shape {actual.shape}")
    if pred.size == 0:
        raise ContractError("cannot score an empty test set")
    residual = pred - actual
    mse = float(np.mean(residual * residual))
    mae = float(np.mean(np.abs(residual)))
    return MetricTriple(mse=mse, mae=mae, rmse=math.sqrt(mse))


@dataclass(frozen=True)
class Evaluation:
    """Scored test windows of one forecaster, in the reporting units."""

    metrics: MetricTriple
    predictions: np.ndarray
    actuals: np.ndarray
    origins: np.ndarray
    predictions_kw: np.ndarray
    actuals_kw: np.ndarray


def evaluate_forecaster(
    forecaster: Forecaster,
    data: PreparedData,
    *,
    theta: float = 0.0,
    metric_units: str = "kw",
    test_stride: str = "window",
) -> Evaluation:
    """Predict every test window, clamp in kW and score.

    Parameters
    ----------
    metric_units: str
        ``"kw"`` scores original units; ``"standardized"`` maps the clamped
        kW forecasts back through the training scaler first.
    test_stride: str
        ``"window"`` uses every stride-1 window; ``"horizon"`` steps by α so
        each test hour is scored once.
    """
    if metric_units not in ("kw", "standardized"):
        raise ConfigurationError(f"unknown metric units {metric_units!r}")
    if test_stride not in ("window", "horizon"):
        raise ConfigurationError(f"unknown test stride {test_stride!r}")
    stride = forecaster.alpha if test_stride == "horizon" else 1
    windows = data.window_set("test", forecaster.tau, forecaster.alpha, stride)
    if len(windows) == 0:
        raise ContractError(
            f"test segment of {data.splits.test.n_hours} hours has no window for "
            f"lookback {forecaster.tau} + horizon {forecaster.alpha}"
        )
    standardized = predict_windows(forecaster, windows.inputs)
    predictions_kw = output_control(data.scaler.invert(standardized), theta)
    if metric_units == "kw":
        predictions, actuals = predictions_kw, windows.raw_targets
    else:
        predictions, actuals = data.scaler.apply(predictions_kw), windows.targets
    return Evaluation(
        metrics=compute_metrics(predictions, actuals),
        predictions=predictions,
        actuals=actuals,
        origins=windows.origins,
        predictions_kw=predictions_kw,
        actuals_kw=windows.raw_targets,
    )


def forecast_trace_frame(
    model: str,
    horizon: int,
    evaluation: Evaluation,
    test_series: LoadSeries,
    tau: int,
) -> pd.DataFrame:
    """Tidy per-station rows: model, horizon, origin, step, station, actual_kw, predicted_kw.

    ``origin`` is the timestamp of the first forecast hour of each window.
    """
    count, alpha, stations = evaluation.predictions_kw.shape
    window_idx, step_idx, station_idx = np.indices((count, alpha, stations)).reshape(3, -1)
    first_hours = test_series.timestamps[evaluation.origins + tau]
    return pd.DataFrame(
        {
            "model": display_name(model),
            "horizon": horizon,
            "origin": first_hours[window_idx].strftime("%Y-%m-%dT%H:%M:%SZ"),
            "step": step_idx + 1,
            "station": np.asarray(test_series.stations)[station_idx],
            "actual_kw": evaluation.actuals_kw.reshape(-1),
            "predicted_kw": evaluation.predictions_kw.reshape(-1),
        }
    )


def write_forecast_trace(
    frame: pd.DataFrame,
    path: Union[str, Path],
    metadata: Optional[Mapping[str, object]] = None,
) -> Path:
    """Write a trace frame; ``metadata`` (config digest, seed) becomes ``#`` header lines."""
    return write_frame(frame, path, metadata)


@dataclass
class ReportRow:
    model: str
    horizon: int
    metrics: Optional[MetricTriple] = None
    error: Optional[str] = None

    @property
    def success(self) -> bool:
        return self.metrics is not None


@dataclass
class ForecastReport:
    """Rows keyed by (model tag, horizon) plus run metadata."""

    rows: List[ReportRow] = field(default_factory=list)
    metadata: Dict[str, object] = field(default_factory=dict)

    def add(self, row: ReportRow) -> None:
        if self.row(row.model, row.horizon) is not None:
            raise ContractError(f"duplicate report row for {row.model} at horizon {row.horizon}")
        self.rows.append(row)

    def row(self, model: str, horizon: int) -> Optional[ReportRow]:
        for row in self.rows:
            if row.model == model and row.horizon == horizon:
                return row
        return None

    @property
    def models(self) -> List[str]:
        seen: List[str] = []
        for row in self.rows:
            if row.model not in seen:
                seen.append(row.model)
        return seen

    @property
    def horizons(self) -> List[int]:
        return sorted({row.horizon for row in self.rows})

    def markers(self) -> Dict[Tuple[str, int, str], str]:
        """``*`` for the best and ``_`` for the runner-up per (horizon, metric).

        Tied rows share a marker: every row at the lowest value gets ``*`` and
        every row at the next distinct value gets ``_``.
        """
        marks: Dict[Tuple[str, int, str], str] = {}
        for horizon in self.horizons:
            scored = [r for r in self.rows if r.horizon == horizon and r.success]
            for metric in METRIC_NAMES:
                levels = sorted({getattr(r.metrics, metric) for r in scored})
                for value, mark in zip(levels, ("*", "_")):
                    for row in scored:
                        if getattr(row.metrics, metric) == value:
                            marks[(row.model, horizon, metric)] = mark
        return marks

    def to_frame(self) -> pd.DataFrame:
        """One row per (model, horizon); failed rows carry NaN metrics and the error."""
        records = [
            {
                "model": row.model,
                "horizon": row.horizon,
                **(row.metrics.as_dict() if row.success else dict.fromkeys(METRIC_NAMES, np.nan)),
                "error": "" if row.success else (row.error or "").replace("\n", " "),
            }
            for row in self.rows
        ]
        return pd.DataFrame(records, columns=["model", "horizon", *METRIC_NAMES, "error"])

    def to_csv(self) -> str:
        return frame_to_text(self.to_frame(), self.metadata)

    def _cells(self) -> Tuple[List[str], List[List[str]]]:
        marks = self.markers()
        header = ["Step", "Metrics"] + [display_name(m) for m in self.models]
        body: List[List[str]] = []
        for horizon in self.horizons:
            for metric in METRIC_NAMES:
                line = [f"{horizon}h", metric.upper()]
                for model in self.models:
                    row = self.row(model, horizon)
                    if row is None:
                        line.append("")
                    elif not row.success:
                        line.append("error")
                    else:
                        value = getattr(row.metrics, metric)
                        line.append(f"{value:.4f}{marks.get((model, horizon, metric), '')}")
                body.append(line)
        return header, body

    def to_text(self) -> str:
        """Aligned plain-text table: one line per (step, metric), one column per model."""
        header, body = self._cells()
        return pd.DataFrame(body, columns=header).to_string(index=False) + "\n"

    def render_table(self, title: str = "Forecast comparison") -> Table:
        header, body = self._cells()
        table = Table(title=title)
        for name in header:
            table.add_column(name, justify="right", style="cyan" if name in ("Step", "Metrics") else None)
        for line in body:
            styled = [
                f"[bold]{c[:-1]}[/bold]" if c.endswith("*")
                else f"[underline]{c[:-1]}[/underline]" if c.endswith("_")
                else c
                for c in line
            ]
            table.add_row(*styled)
        return table

    def write(self, path: Union[str, Path]) -> Path:
        return write_frame(self.to_frame(), path, self.metadata)


@dataclass(frozen=True)
class ReferenceCheck:
    horizon: int
    metric: str
    measured: float
    reference: float

    @property
    def deviation(self) -> float:
        return (self.measured - self.reference) / self.reference

    @property
    def within_tolerance(self) -> bool:
        return abs(self.deviation) <= REFERENCE_TOLERANCE


def compare_to_reference(report: ForecastReport, dataset_kind: str) -> List[ReferenceCheck]:
    """Relative deviation of the report's MSTEM rows from the published scores."""
    if dataset_kind not in PUBLISHED_REFERENCE:
        raise ConfigurationError(
            f"no published reference for dataset kind {dataset_kind!r} (use fast or slow)"
        )
    checks: List[ReferenceCheck] = []
    for horizon, scores in PUBLISHED_REFERENCE[dataset_kind].items():
        row = report.row("mstem", horizon)
        if row is None or not row.success:
            continue
        for metric in METRIC_NAMES:
            checks.append(
                ReferenceCheck(
                    horizon=horizon,
                    metric=metric,
                    measured=getattr(row.metrics, metric),
                    reference=scores[metric],
                )
            )
    return checks


def _score_job(
    model: str,
    horizon: int,
    series: LoadSeries,
    run_config: RunConfig,
    seeds: Sequence[int],
    tracer: Optional[Tracer],
) -> Tuple[ReportRow, Optional[pd.DataFrame]]:
    config = run_config.for_horizon(horizon)
    data = prepare_splits(
        series,
        config.model.tau,
        horizon,
        config.data.split,
        standardize=config.data.standardize,
    )
    runs = seeds if is_trainable(model) else seeds[:1]
    predictions: List[np.ndarray] = []
    actuals: List[np.ndarray] = []
    trace: Optional[pd.DataFrame] = None
    for seed in runs:
        seeded = config.with_seed(seed)
        forecaster = build_forecaster(model, seeded.model, series.n_stations, seed, seeded.baseline)
        if forecaster.trainable:
            train(
                forecaster,
                data.window_set("train", forecaster.tau, horizon),
                data.window_set("val", forecaster.tau, horizon),
                seeded.train,
                tracer,
            )
        result = evaluate_forecaster(
            forecaster,
            data,
            theta=seeded.model.theta,
            metric_units=seeded.evaluation.metric_units,
            test_stride=seeded.evaluation.test_stride,
        )
        predictions.append(result.predictions)
        actuals.append(result.actuals)
        if trace is None:
            trace = forecast_trace_frame(model, horizon, result, data.splits.test, forecaster.tau)
    # residuals of all seeds are pooled before scoring
    metrics = compute_metrics(np.concatenate(predictions), np.concatenate(actuals))
    return ReportRow(model=model, horizon=horizon, metrics=metrics), trace


async def _run_jobs(
    jobs: List[Tuple[str, int]],
    series: LoadSeries,
    run_config: RunConfig,
    seeds: Sequence[int],
    workers: int,
    tracer: Optional[Tracer],
) -> List[Tuple[ReportRow, Optional[pd.DataFrame]]]:
    limit = asyncio.Semaphore(workers)

    async def run_one(model: str, horizon: int) -> Tuple[ReportRow, Optional[pd.DataFrame]]:
        async with limit:
            try:
                return await asyncio.to_thread(_score_job, model, horizon, series, run_config, seeds, tracer)
            except Exception as exc:
                logger.warning("%s at horizon %d failed: %s", model, horizon, exc)
                return ReportRow(model=model, horizon=horizon, error=f"{type(exc).__name__}: {exc}"), None

    return await asyncio.gather(*(run_one(model, horizon) for model, horizon in jobs))


def run_comparison(
    series: LoadSeries,
    run_config: Optional[RunConfig] = None,
    *,
    horizons: Optional[Sequence[int]] = None,
    models: Optional[Sequence[str]] = None,
    seeds: Optional[Sequence[int]] = None,
    workers: Optional[int] = None,
    tracer: Optional[Tracer] = None,
    dataset_id: str = "",
) -> ForecastReport:
    """Train and score every (model, horizon) pair and return the ordered report."""
    run_config = run_config or RunConfig()
    horizons = tuple(dict.fromkeys(horizons or run_config.evaluation.horizons))
    requested = [normalize_tag(m) for m in (models or run_config.evaluation.models)]
    ordered = [m for m in MODEL_ORDER if m in requested] + [m for m in requested if m not in MODEL_ORDER]
    seeds = tuple(seeds) if seeds else (run_config.seed,)
    workers = workers or run_config.workers
    jobs = [(model, horizon) for model in ordered for horizon in horizons]

    if tracer is not None:
        tracer.log(
            role="orchestrator",
            sender="compare",
            content=f"Created {len(jobs)} jobs",
            metadata={"models": ordered, "horizons": list(horizons), "seeds": list(seeds)},
        )
    outcomes = asyncio.run(_run_jobs(jobs, series, run_config, seeds, workers, tracer))

    report = ForecastReport(
        metadata={
            "dataset": dataset_id,
            "seeds": " ".join(str(s) for s in seeds),
            "config_digest": run_config.digest(),
            "metric_units": run_config.evaluation.metric_units,
            "test_stride": run_config.evaluation.test_stride,
        }
    )
    trace_dir = run_config.evaluation.forecast_trace_dir
    for row, trace in outcomes:
        report.add(row)
        if tracer is not None:
            tracer.log(
                role="worker",
                sender=row.model,
                content=f"horizon {row.horizon}: {'ok' if row.success else row.error}",
                metadata=row.metrics.as_dict() if row.success else {},
            )
        if trace_dir and trace is not None:
            write_forecast_trace(
                trace,
                Path(trace_dir) / f"{row.model}_h{row.horizon}.csv",
                {"config_digest": report.metadata["config_digest"], "seed": seeds[0]},
            )
    return report
