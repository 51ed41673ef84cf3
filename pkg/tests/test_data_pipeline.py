"""Ingestion, hourly resampling, caches, splits, windows and scaling."""

from __future__ import annotations

import io
import logging

import numpy as np
import pandas as pd
import pytest

from charging_forecast.data_pipeline import (
    ChargingEvent,
    Scaler,
    fit_apply_invert_scaler,
    ingest_events,
    load_events_as_series,
    make_windows,
    prepare_splits,
    read_series_cache,
    resample_hourly,
    split_series,
    window_arrays,
    write_series_cache,
)
from charging_forecast.errors import (
    ConfigurationError,
    ContractError,
    DataError,
    IngestionError,
    ParameterError,
)
from charging_forecast.synthetic import generate_events, write_events
from conftest import make_series

HEADER = "station_id,connector_kw,start_time,end_time,energy_kwh\n"


def _events_csv(*rows: str) -> io.StringIO:
    return io.StringIO(HEADER + "\n".join(rows) + "\n")


# ── ingestion ─────────────────────────────────────────────────────────────────


def test_sample_file_ingestion_reports_rejects(sample_events_path):
    report = ingest_events(sample_events_path)
    assert len(report.events) == 7
    assert [(r.row, r.reason) for r in report.rejected] == [
        (6, "unparseable timestamp"),
        (9, "negative duration"),
    ]
    assert report.total_rows == 9


def test_kind_filter_uses_connector_power(sample_events_path):
    fast = ingest_events(sample_events_path, "fast")
    slow = ingest_events(sample_events_path, "slow")
    assert {e.station_id for e in fast.events} == {"A01", "A03"}
    assert {e.station_id for e in slow.events} == {"A02"}
    assert fast.excluded == len(slow.events)


def test_event_validation_reasons():
    report = ingest_events(
        _events_csv(
            "S1,22,2024-01-01T00:00:00Z,2024-01-01T01:00:00Z,5",
            "S1,22,2024-01-01T00:00:00Z,2024-01-01T01:00:00Z,-1",
            " ,22,2024-01-01T00:00:00Z,2024-01-01T01:00:00Z,5",
            "S1,22,2024-01-01T02:00:00Z,2024-01-01T03:00:00Z,5",
        )
    )
    assert [r.reason for r in report.rejected] == ["negative energy", "missing station id"]


def test_non_finite_numbers_are_rejected():
    good = "S1,22,2024-01-01T00:00:00Z,2024-01-01T01:00:00Z,5"
    report = ingest_events(
        _events_csv(
            good,
            "S1,22,2024-01-01T00:00:00Z,2024-01-01T01:00:00Z,nan",
            "S1,22,2024-01-01T00:00:00Z,2024-01-01T01:00:00Z,inf",
            "S1,inf,2024-01-01T00:00:00Z,2024-01-01T01:00:00Z,5",
            good,
            good,
            good,
        )
    )
    assert [(r.row, r.reason) for r in report.rejected] == [
        (2, "non-finite energy"),
        (3, "non-finite energy"),
        (4, "non-finite connector power"),
    ]
    assert len(report.events) == 4


def test_mostly_rejected_file_is_an_ingestion_error():
    source = _events_csv(
        "S1,22,bad,2024-01-01T01:00:00Z,5",
        "S1,22,bad,2024-01-01T01:00:00Z,5",
        "S1,22,2024-01-01T00:00:00Z,2024-01-01T01:00:00Z,5",
    )
    with pytest.raises(IngestionError, match="unparseable timestamp"):
        ingest_events(source)


def test_missing_columns_and_files_are_data_errors(tmp_path):
    with pytest.raises(DataError, match="energy_kwh"):
        ingest_events(io.StringIO("station_id,connector_kw,start_time,end_time\n"))
    with pytest.raises(DataError):
        ingest_events(tmp_path / "absent.csv")


def test_empty_filter_result_is_a_data_error():
    source = _events_csv("S1,7,2024-01-01T00:00:00Z,2024-01-01T01:00:00Z,5")
    with pytest.raises(DataError, match="empty series"):
        load_events_as_series(source, "fast")


# ── resampling ────────────────────────────────────────────────────────────────


def test_sample_events_resample_to_golden_cache(sample_events_path, sample_series_path, tmp_path):
    series, _ = load_events_as_series(sample_events_path)
    golden = read_series_cache(sample_series_path)
    assert series.stations == ("A01", "A02", "A03")
    assert series.start == golden.start
    np.testing.assert_allclose(series.values, golden.values, atol=1e-12)

    out = write_series_cache(series, tmp_path / "series.csv")
    assert out.read_bytes() == sample_series_path.read_bytes()


def test_energy_is_conserved_over_a_thousand_events():
    frame = generate_events(n_stations=4, days=30, seed=3).head(1000)
    report = ingest_events(frame)
    assert len(report.events) == 1000
    series = resample_hourly(report.events)
    expected = sum(e.energy_kwh for e in report.events)
    assert series.total_energy_kwh == pytest.approx(expected, rel=1e-6)


def test_event_spanning_hours_is_split_by_overlap():
    event = ChargingEvent(
        station_id="S1",
        connector_kw=22,
        start_time="2024-01-01T00:30:00Z",
        end_time="2024-01-01T02:00:00Z",
        energy_kwh=9.0,
    )
    series = resample_hourly([event])
    np.testing.assert_allclose(series.values[:, 0], [3.0, 6.0])


def test_zero_duration_event_lands_in_its_start_hour():
    event = ChargingEvent(
        station_id="S1",
        connector_kw=7,
        start_time="2024-01-01T05:20:00Z",
        end_time="2024-01-01T05:20:00Z",
        energy_kwh=4.0,
    )
    series = resample_hourly([event])
    assert series.values.tolist() == [[4.0]]
    assert series.start == pd.Timestamp("2024-01-01T05:00:00Z")


def test_station_list_must_cover_events(sample_events_path):
    report = ingest_events(sample_events_path)
    with pytest.raises(ParameterError, match="A03"):
        resample_hourly(report.events, stations=["A01", "A02"])


def test_cache_rejects_hour_gaps(tmp_path):
    path = tmp_path / "gappy.csv"
    path.write_text("timestamp,S1\n2024-01-01T00:00:00Z,1\n2024-01-01T02:00:00Z,1\n")
    with pytest.raises(DataError, match="consecutive"):
        read_series_cache(path)


@pytest.mark.parametrize(
    "body, message",
    [
        ("2024-01-01T00:00:00Z,1\n2024-01-01T01:00:00Z,inf\n", "finite"),
        ("2024-01-01T00:00:00Z,1\n2024-01-01T01:00:00Z,abc\n", "non-numeric"),
        ("2024-01-01T00:00:00Z,1\nyesterday noon-ish,1\n", "timestamp"),
    ],
)
def test_cache_rejects_malformed_cells(tmp_path, body, message):
    path = tmp_path / "broken.csv"
    path.write_text("timestamp,S1\n" + body)
    with pytest.raises(DataError, match=message):
        read_series_cache(path)


def test_prepare_is_deterministic(tmp_path):
    events = write_events(generate_events(n_stations=2, days=5, seed=9), tmp_path / "events.csv")
    first, _ = load_events_as_series(events)
    second, _ = load_events_as_series(events)
    a = write_series_cache(first, tmp_path / "a.csv").read_bytes()
    b = write_series_cache(second, tmp_path / "b.csv").read_bytes()
    assert a == b


# ── splits and windows ────────────────────────────────────────────────────────


@pytest.mark.parametrize("hours, expected", [(100, (70, 10, 20)), (10, (7, 1, 2)), (101, (70, 10, 21))])
def test_split_boundaries(hours, expected):
    splits = split_series(make_series(np.zeros((hours, 1))))
    assert tuple(part.n_hours for part in splits) == expected
    assert splits.val.start == splits.train.start + pd.Timedelta(hours=expected[0])


def test_split_fractions_must_sum_to_one():
    with pytest.raises(ConfigurationError):
        split_series(make_series(np.zeros((10, 1))), (0.5, 0.1, 0.1))


def test_infeasible_split_names_the_segment():
    with pytest.raises(ConfigurationError, match="validation"):
        split_series(make_series(np.zeros((100, 1))), min_length=30)


def test_window_count_and_alignment():
    values = np.arange(20, dtype=float).reshape(10, 2)
    inputs, targets, origins = window_arrays(values, tau=4, alpha=2)
    assert inputs.shape == (5, 4, 2) and targets.shape == (5, 2, 2)
    assert origins.tolist() == [0, 1, 2, 3, 4]
    np.testing.assert_array_equal(inputs[2], values[2:6])
    np.testing.assert_array_equal(targets[2], values[6:8])


def test_window_stride():
    _, _, origins = window_arrays(np.zeros((20, 1)), tau=4, alpha=3, stride=3)
    assert origins.tolist() == [0, 3, 6, 9, 12]


def test_short_series_gives_no_windows_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        windows = make_windows(np.zeros((5, 2)), tau=4, alpha=2)
    assert windows == []
    assert "too short" in caplog.text


def test_window_arguments_must_be_positive():
    with pytest.raises(ParameterError):
        window_arrays(np.zeros((10, 1)), tau=0, alpha=2)


# ── scaling ───────────────────────────────────────────────────────────────────


def test_scaler_fits_training_segment_only(diurnal_series):
    data = prepare_splits(diurnal_series, tau=24, alpha=6)
    train = data.splits.train.values
    np.testing.assert_allclose(data.scaler.mean, train.mean(axis=0))
    standardized = data.scaler.apply(train)
    np.testing.assert_allclose(standardized.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(data.scaler.invert(standardized), train, atol=1e-12)


def test_scaler_floors_constant_stations():
    scaler = Scaler().fit(np.array([[2.0, 1.0], [2.0, 3.0]]))
    assert scaler.std[0] == Scaler.STD_FLOOR
    assert np.all(np.isfinite(scaler.apply(np.array([[2.0, 2.0]]))))


def test_scaler_before_fit_is_a_contract_error():
    with pytest.raises(ContractError):
        Scaler().apply(np.zeros((1, 1)))


def test_window_set_keeps_raw_targets(diurnal_series):
    data = prepare_splits(diurnal_series, tau=24, alpha=6)
    test = data.window_set("test", 24, 6)
    np.testing.assert_allclose(data.scaler.invert(test.targets), test.raw_targets, atol=1e-12)


def test_fit_apply_invert_round_trip(diurnal_series):
    splits = split_series(diurnal_series)
    scaler, standardized, restored = fit_apply_invert_scaler(splits.train, diurnal_series.values)
    np.testing.assert_allclose(restored, diurnal_series.values, atol=1e-12)
    np.testing.assert_allclose(standardized[: splits.train.n_hours].std(axis=0), 1.0, atol=1e-12)
    assert scaler.is_fit
