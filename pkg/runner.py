"""
Command-line entry point for the charging-load forecasting pipeline.

Use this script to generate synthetic events, prepare hourly series, train
forecasters and compare them.  Settings come from built-in defaults, an
optional config file (``--config``), ``EVCS_``-prefixed environment variables
and finally command-line flags.  Run with `--help` to see all options.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from charging_forecast.checkpoint import restore_forecaster, save_checkpoint
from charging_forecast.config import RunConfig, load_run_config
from charging_forecast.data_pipeline import (
    TIMESTAMP_FORMAT,
    LoadSeries,
    load_events_as_series,
    prepare_splits,
    read_series_cache,
    write_frame,
    write_series_cache,
)
from charging_forecast.errors import ConfigurationError, ContractError, ForecastError
from charging_forecast.evaluation import (
    ForecastReport,
    ReportRow,
    compare_to_reference,
    evaluate_forecaster,
    forecast_trace_frame,
    run_comparison,
    write_forecast_trace,
)
from charging_forecast.model import Forecaster, output_control
from charging_forecast.registry import build_forecaster, display_name, is_trainable
from charging_forecast.synthetic import generate_events, write_events
from charging_forecast.training import train, validation_mse
from utils.env_loader import load_env
from utils.tracing import Tracer

console = Console()
logger = logging.getLogger("charging_forecast.runner")

# dedicated flags and the config key each one sets
FLAG_KEYS = {
    "seed": "RUN_SEED",
    "workers": "RUN_WORKERS",
    "model": "RUN_MODEL",
    "events": "DATA_EVENTS",
    "series": "DATA_SERIES",
    "kind": "DATA_KIND",
    "horizon": "MODEL_ALPHA",
    "lookback": "MODEL_TAU",
    "theta": "MODEL_THETA",
    "epochs": "TRAIN_EPOCHS",
    "horizons": "EVAL_HORIZONS",
    "models": "EVAL_MODELS",
    "trace_dir": "EVAL_FORECAST_TRACE_DIR",
}


class CliParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def parse_overrides(args: argparse.Namespace) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip().upper()] = value.strip()
    for attr, key in FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value)
    return overrides


def resolve_config(args: argparse.Namespace) -> RunConfig:
    return load_run_config(getattr(args, "config", None), parse_overrides(args))


def load_series(config: RunConfig, tracer: Optional[Tracer] = None) -> LoadSeries:
    """The hourly series named by the config: a cache file, or events to resample."""
    if config.data.series:
        return read_series_cache(config.data.series)
    if config.data.events:
        series, report = load_events_as_series(config.data.events, config.data.kind)
        if tracer is not None:
            tracer.log(
                role="pipeline",
                sender="ingest",
                content=f"{len(report.events)} events",
                metadata={"rejected": len(report.rejected), "excluded": report.excluded},
            )
        return series
    raise ConfigurationError("no input data: pass --series CACHE or --events FILE")


def artifact_metadata(config: RunConfig, **extra: object) -> Dict[str, object]:
    return {"config_digest": config.digest(), "seed": config.seed, **extra}


def metric_table(title: str, rows: Sequence[ReportRow]) -> Table:
    table = Table(title=title)
    table.add_column("Model", style="cyan", no_wrap=True)
    table.add_column("Horizon", justify="right")
    for name in ("MSE", "MAE", "RMSE"):
        table.add_column(name, justify="right", style="green")
    for row in rows:
        m = row.metrics
        table.add_row(display_name(row.model), str(row.horizon), f"{m.mse:.4f}", f"{m.mae:.4f}", f"{m.rmse:.4f}")
    return table


def forecaster_for(args: argparse.Namespace, config: RunConfig, n_stations: int) -> Forecaster:
    """A restored checkpoint, or a training-free model built from the config."""
    if getattr(args, "checkpoint", None):
        forecaster = restore_forecaster(args.checkpoint)
        if forecaster.n_stations != n_stations:
            raise ContractError(
                f"checkpoint expects {forecaster.n_stations} stations, series has {n_stations}"
            )
        return forecaster
    if is_trainable(config.model_tag):
        raise ContractError(
            f"{config.model_tag} needs trained parameters; pass --checkpoint from the train command"
        )
    return build_forecaster(config.model_tag, config.model, n_stations, baseline_config=config.baseline)


def run_synth(args: argparse.Namespace) -> int:
    frame = generate_events(
        n_stations=args.stations,
        days=args.days,
        seed=getattr(args, "seed", 0),
        kind=args.station_kind,
        start=args.start,
    )
    path = write_events(frame, args.out)
    console.print(f"[bold blue]Wrote {len(frame)} events[/bold blue] for {args.stations} stations to {path}")
    return 0


def run_prepare(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    if not config.data.events:
        raise ConfigurationError("prepare needs --events FILE")
    series, report = load_events_as_series(config.data.events, config.data.kind)
    path = write_series_cache(series, args.out)
    table = Table(title="Prepared series")
    table.add_column("Field", style="cyan", no_wrap=True)
    table.add_column("Value", style="green")
    table.add_row("Stations", str(series.n_stations))
    table.add_row("Hours", str(series.n_hours))
    table.add_row("Total energy (kWh)", f"{series.total_energy_kwh:.3f}")
    table.add_row("Rejected rows", str(len(report.rejected)))
    table.add_row("Excluded by kind", str(report.excluded))
    table.add_row("Cache", str(path))
    console.print(table)
    for rejected in report.rejected[:5]:
        logger.info("rejected row %d: %s", rejected.row, rejected.reason)
    return 0


def run_train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    if not is_trainable(config.model_tag):
        raise ContractError(
            f"{config.model_tag} is a training-free model; use the evaluate command instead"
        )
    tracer = Tracer(task_id=f"train-{config.model_tag}-{config.digest()[:12]}", trace_dir=config.trace_dir)
    series = load_series(config, tracer)
    data = prepare_splits(
        series, config.model.tau, config.model.alpha, config.data.split, config.data.standardize
    )
    forecaster = build_forecaster(
        config.model_tag, config.model, series.n_stations, config.seed, config.baseline
    )
    train_set = data.window_set("train", config.model.tau, config.model.alpha)
    val_set = data.window_set("val", config.model.tau, config.model.alpha)
    _, log = train(forecaster, train_set, val_set, config.train, tracer)

    checkpoint = save_checkpoint(
        forecaster,
        args.out,
        artifact_metadata(config, best_epoch=log.best_epoch, val_mse=validation_mse(forecaster, val_set)),
    )
    log.metadata = artifact_metadata(config, model=config.model_tag)
    log_path = log.write(args.log or Path(args.out).with_suffix(".log.csv"))
    trace_path = tracer.finalize()

    table = Table(title=f"Trained {display_name(config.model_tag)}")
    table.add_column("Field", style="cyan", no_wrap=True)
    table.add_column("Value", style="green")
    table.add_row("Epochs", str(len(log.records)))
    table.add_row("Best epoch", str(log.best_epoch))
    table.add_row("Best validation MSE", f"{log.best_val_mse:.6f}")
    table.add_row("Checkpoint", str(checkpoint))
    table.add_row("Train log", str(log_path))
    table.add_row("Trace File", trace_path)
    console.print(table)
    return 0


def run_evaluate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    series = load_series(config)
    forecaster = forecaster_for(args, config, series.n_stations)
    data = prepare_splits(
        series, forecaster.tau, forecaster.alpha, config.data.split, config.data.standardize
    )
    result = evaluate_forecaster(
        forecaster,
        data,
        theta=config.model.theta,
        metric_units=config.evaluation.metric_units,
        test_stride=config.evaluation.test_stride,
    )
    report = ForecastReport(metadata=artifact_metadata(config, units=config.evaluation.metric_units))
    report.add(ReportRow(model=forecaster.tag, horizon=forecaster.alpha, metrics=result.metrics))
    console.print(metric_table("Evaluation", report.rows))
    if args.out:
        console.print(f"Report saved to {report.write(args.out)}")
    if config.evaluation.forecast_trace_dir:
        frame = forecast_trace_frame(forecaster.tag, forecaster.alpha, result, data.splits.test, forecaster.tau)
        path = Path(config.evaluation.forecast_trace_dir) / f"{forecaster.tag}_h{forecaster.alpha}.csv"
        saved = write_forecast_trace(frame, path, artifact_metadata(config))
        console.print(f"Forecast trace saved to {saved}")
    return 0


def run_compare(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    tracer = Tracer(task_id=f"compare-{config.digest()[:12]}", trace_dir=config.trace_dir)
    series = load_series(config, tracer)
    seeds = _int_list(args.seeds) if args.seeds else None
    report = run_comparison(
        series,
        config,
        seeds=seeds,
        tracer=tracer,
        dataset_id=config.data.series or config.data.events or "",
    )
    console.print(report.render_table())
    for row in report.rows:
        if not row.success:
            console.print(f"[red]{display_name(row.model)} at {row.horizon}h failed:[/red] {row.error}")
    if args.out:
        path = report.write(args.out)
        Path(path).with_suffix(".txt").write_text(report.to_text(), encoding="utf-8")
        console.print(f"Report saved to {path}")
    if args.reference:
        checks = compare_to_reference(report, args.reference)
        table = Table(title=f"MSTEM vs published {args.reference}-charging scores")
        for name in ("Horizon", "Metric", "Measured", "Published", "Deviation", "Within 30%"):
            table.add_column(name, justify="right")
        for check in checks:
            table.add_row(
                f"{check.horizon}h",
                check.metric.upper(),
                f"{check.measured:.4f}",
                f"{check.reference:.2f}",
                f"{check.deviation:+.1%}",
                "yes" if check.within_tolerance else "no",
            )
        console.print(table)
    console.print(f"Trace saved to {tracer.finalize()}")
    return 0


def run_forecast(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    series = load_series(config)
    forecaster = forecaster_for(args, config, series.n_stations)
    data = prepare_splits(
        series, forecaster.tau, forecaster.alpha, config.data.split, config.data.standardize
    )
    if series.n_hours < forecaster.tau:
        raise ContractError(f"series has {series.n_hours} hours; lookback needs {forecaster.tau}")
    window = data.scaler.apply(series.values[-forecaster.tau:])
    prediction = output_control(data.scaler.invert(forecaster.predict(window)), config.model.theta)
    future = series.timestamps[-1] + pd.to_timedelta(np.arange(1, forecaster.alpha + 1), unit="h")
    frame = pd.DataFrame(prediction, columns=list(series.stations))
    frame.insert(0, "timestamp", future.strftime(TIMESTAMP_FORMAT))

    table = Table(title=f"{display_name(forecaster.tag)} forecast (kW)")
    for column in frame.columns:
        table.add_column(column, justify="right", style="cyan" if column == "timestamp" else "green")
    for values in frame.itertuples(index=False):
        table.add_row(values[0], *(f"{v:.3f}" for v in values[1:]))
    console.print(table)
    if args.out:
        path = write_frame(frame, args.out, artifact_metadata(config, model=forecaster.tag))
        console.print(f"Forecast saved to {path}")
    return 0


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> CliParser:
    # SUPPRESS keeps a global flag given before the subcommand from being reset by the subparser
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="Key-value config file (DATA_*, MODEL_*, TRAIN_*, ...)")
    common.add_argument("--seed", type=int, help="Run seed (model init, shuffling, dropout)")
    common.add_argument("--workers", type=int, help="Concurrent comparison jobs")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override any config key")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--series", help="Hourly series cache written by prepare")
    data.add_argument("--events", help="Charging-event file (resampled on the fly)")
    data.add_argument("--kind", choices=["fast", "slow", "all"], help="Connector filter")

    parser = CliParser(description="Forecast hourly EV charging load per station.", parents=[common])
    subparsers = parser.add_subparsers(dest="command", required=True)

    synth = subparsers.add_parser("synth", help="Generate seeded synthetic charging events", parents=[common])
    synth.add_argument("--out", required=True, help="Event file to write")
    synth.add_argument("--stations", type=int, default=4, help="Number of stations (default 4)")
    synth.add_argument("--days", type=int, default=90, help="Days of events (default 90)")
    synth.add_argument(
        "--station-kind", dest="station_kind", choices=["fast", "slow", "mixed"], default="fast",
        help="Charger class of the generated stations (default fast)",
    )
    synth.add_argument("--start", default="2023-01-02", help="First day (default 2023-01-02)")
    synth.set_defaults(func=run_synth)

    prepare = subparsers.add_parser("prepare", help="Resample events to an hourly series cache", parents=[common])
    prepare.add_argument("--events", help="Charging-event file")
    prepare.add_argument("--kind", choices=["fast", "slow", "all"], help="Connector filter")
    prepare.add_argument("--out", required=True, help="Series cache to write")
    prepare.set_defaults(func=run_prepare)

    train_cmd = subparsers.add_parser("train", help="Train one model and write a checkpoint", parents=[common, data])
    train_cmd.add_argument("--model", help="Model tag (mstem, mlp, gru, lstm, dlinear)")
    train_cmd.add_argument("--horizon", type=int, help="Forecast horizon in hours")
    train_cmd.add_argument("--lookback", type=int, help="Lookback window in hours")
    train_cmd.add_argument("--epochs", type=int, help="Training epochs")
    train_cmd.add_argument("--out", required=True, help="Checkpoint path")
    train_cmd.add_argument("--log", help="Train log CSV (default: next to the checkpoint)")
    train_cmd.set_defaults(func=run_train)

    evaluate = subparsers.add_parser("evaluate", help="Score one model on the test split", parents=[common, data])
    evaluate.add_argument("--checkpoint", help="Checkpoint of a trained model")
    evaluate.add_argument("--model", help="Training-free model tag (ma, hi) when no checkpoint is given")
    evaluate.add_argument("--horizon", type=int, help="Forecast horizon for training-free models")
    evaluate.add_argument("--lookback", type=int, help="Lookback window for training-free models")
    evaluate.add_argument("--theta", type=float, help="Output-control threshold in kW")
    evaluate.add_argument("--trace-dir", dest="trace_dir", help="Write per-station forecast traces here")
    evaluate.add_argument("--out", help="Report CSV")
    evaluate.set_defaults(func=run_evaluate)

    compare = subparsers.add_parser("compare", help="Train and score every model per horizon", parents=[common, data])
    compare.add_argument("--models", help="Comma-separated model tags")
    compare.add_argument("--horizons", help="Comma-separated horizons in hours")
    compare.add_argument("--seeds", help="Comma-separated seeds; residuals are pooled")
    compare.add_argument("--epochs", type=int, help="Training epochs")
    compare.add_argument("--trace-dir", dest="trace_dir", help="Write per-station forecast traces here")
    compare.add_argument("--reference", choices=["fast", "slow"], help="Check MSTEM rows against published scores")
    compare.add_argument("--out", help="Report CSV (an aligned .txt table is written next to it)")
    compare.set_defaults(func=run_compare)

    forecast = subparsers.add_parser("forecast", help="Predict the next hours from the latest window", parents=[common, data])
    forecast.add_argument("--checkpoint", help="Checkpoint of a trained model")
    forecast.add_argument("--model", help="Training-free model tag (ma, hi) when no checkpoint is given")
    forecast.add_argument("--horizon", type=int, help="Forecast horizon for training-free models")
    forecast.add_argument("--lookback", type=int, help="Lookback window for training-free models")
    forecast.add_argument("--theta", type=float, help="Output-control threshold in kW")
    forecast.add_argument("--out", help="Forecast CSV")
    forecast.set_defaults(func=run_forecast)
    return parser


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(getattr(args, "verbose", False))
    load_env()
    try:
        return args.func(args)
    except ForecastError as exc:
        console.print(f"[bold red]error:[/bold red] {exc}")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
