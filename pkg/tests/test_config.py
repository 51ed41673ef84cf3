"""Flat key parsing, precedence and the result-relevant digest."""

from __future__ import annotations

import pytest

from charging_forecast.config import RunConfig, load_run_config, run_config_from_flat
from charging_forecast.errors import ConfigurationError
from utils.env_loader import environment_overrides, merged_settings, read_config_file


def test_defaults():
    config = run_config_from_flat({})
    assert config.model.tau == 24
    assert config.model.scales == (1, 5)
    assert config.evaluation.horizons == (6, 12, 24)
    assert config.train.epochs == 50
    assert config.model_tag == "mstem"


def test_flat_keys_map_to_sections():
    config = run_config_from_flat(
        {
            "MODEL_SCALES": "1,3,6",
            "train_learning_rate": "0.01",
            "EVAL_MODELS": "HI, mstem",
            "DATA_SPLIT": "0.6,0.2,0.2",
            "RUN_MODEL": "GRU",
            "BASELINE_MA_WINDOW": "none",
            "TRAIN_CLIP_NORM": "",
        }
    )
    assert config.model.scales == (1, 3, 6)
    assert config.train.learning_rate == 0.01
    assert config.evaluation.models == ("hi", "mstem")
    assert config.data.split == (0.6, 0.2, 0.2)
    assert config.model_tag == "gru"
    assert config.baseline.ma_window is None
    assert config.train.clip_norm is None


def test_repeated_horizons_and_models_collapse_in_order():
    config = run_config_from_flat({"EVAL_HORIZONS": "12,6,12", "EVAL_MODELS": "hi,HI,ma"})
    assert config.evaluation.horizons == (12, 6)
    assert config.evaluation.models == ("hi", "ma")


def test_run_seed_propagates_unless_overridden():
    config = run_config_from_flat({"RUN_SEED": "9"})
    assert (config.seed, config.model.seed, config.train.seed) == (9, 9, 9)
    config = run_config_from_flat({"RUN_SEED": "9", "MODEL_SEED": "2"})
    assert (config.model.seed, config.train.seed) == (2, 9)


@pytest.mark.parametrize("key", ["MODEL_WIDTH", "COLOR", "RUN_COLOR", "TRAIN_"])
def test_unknown_keys_are_rejected(key):
    with pytest.raises(ConfigurationError, match="unknown"):
        run_config_from_flat({key: "1"})


@pytest.mark.parametrize(
    "values",
    [
        {"MODEL_TAU": "abc"},
        {"MODEL_SCALES": "1,30"},
        {"TRAIN_BATCH_SIZE": "0"},
        {"EVAL_METRIC_UNITS": "mw"},
        {"DATA_KIND": "medium"},
        {"RUN_WORKERS": "0"},
        {"RUN_MODEL": "arima"},
    ],
)
def test_invalid_values_are_configuration_errors(values):
    with pytest.raises(ConfigurationError):
        run_config_from_flat(values)


def test_precedence_file_env_overrides(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("TRAIN_EPOCHS=5\nMODEL_TAU=12\nRUN_SEED=3\n# comment\n")
    environ = {"EVCS_MODEL_TAU": "18", "UNRELATED": "x"}
    config = load_run_config(path, overrides={"RUN_SEED": "4"}, environ=environ)
    assert config.train.epochs == 5
    assert config.model.tau == 18
    assert config.seed == 4


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        load_run_config(tmp_path / "absent.env", environ={})


def test_digest_tracks_result_settings_only():
    base = RunConfig()
    assert base.digest() == run_config_from_flat({}).digest()
    assert base.digest() == run_config_from_flat({"RUN_WORKERS": "4", "RUN_TRACE_DIR": "elsewhere"}).digest()
    assert base.digest() == run_config_from_flat({"DATA_SERIES": "a.csv", "EVAL_FORECAST_TRACE_DIR": "t"}).digest()
    assert base.digest() != run_config_from_flat({"TRAIN_EPOCHS": "5"}).digest()
    assert len(base.digest()) == 64


def test_horizon_and_seed_copies():
    base = RunConfig()
    assert base.for_horizon(12).model.alpha == 12
    seeded = base.with_seed(5)
    assert (seeded.seed, seeded.model.seed, seeded.train.seed) == (5, 5, 5)
    assert base.seed == 0


def test_env_loader_helpers(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("model_tau = 8\nEVAL_HORIZONS=6,12\n")
    assert read_config_file(path) == {"MODEL_TAU": "8", "EVAL_HORIZONS": "6,12"}
    assert environment_overrides({"EVCS_train_epochs": " 3 ", "EVCS_": "x", "PATH": "/bin"}) == {
        "TRAIN_EPOCHS": "3"
    }
    merged = merged_settings(path, {"model_tau": 10}, {"EVCS_MODEL_TAU": "9"})
    assert merged["MODEL_TAU"] == "10"
    with pytest.raises(FileNotFoundError):
        read_config_file(tmp_path / "absent.env")
