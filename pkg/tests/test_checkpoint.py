"""Binary checkpoint layout and restoration."""

from __future__ import annotations

import numpy as np
import pytest

from charging_forecast.baselines import DLinearForecaster, GruForecaster
from charging_forecast.checkpoint import MAGIC, load_checkpoint, restore_forecaster, save_checkpoint
from charging_forecast.errors import DataError
from charging_forecast.model import MstemConfig, MstemModel

SMALL = MstemConfig(tau=8, alpha=2, scales=(1, 2), hidden=4, graph_out=3, lstm_hidden=4)


@pytest.mark.parametrize(
    "model",
    [
        MstemModel(SMALL, n_stations=3, seed=7),
        DLinearForecaster(8, 2, 3, kernel=5, seed=7),
        GruForecaster(8, 2, 3, hidden=5, seed=7),
    ],
    ids=lambda m: m.tag,
)
def test_round_trip_restores_identical_forecasts(model, rng, tmp_path):
    model.trained = True
    path = save_checkpoint(model, tmp_path / f"{model.tag}.ckpt", metadata={"val_mse": 0.5})
    assert path.read_bytes().startswith(MAGIC)
    restored = restore_forecaster(path)
    assert type(restored) is type(model)
    window = rng.standard_normal((8, 3))
    np.testing.assert_array_equal(restored.predict(window), model.predict(window))
    assert load_checkpoint(path).metadata == {"val_mse": 0.5}


def test_state_keeps_batch_norm_statistics(tmp_path):
    model = MstemModel(SMALL, n_stations=3)
    model.params.blocks[1].bn_state.running_var[...] = 2.5
    checkpoint = load_checkpoint(save_checkpoint(model, tmp_path / "m.ckpt"))
    assert checkpoint.tag == "mstem"
    assert np.all(checkpoint.state["scale2.running_var"] == 2.5)
    assert list(checkpoint.state) == list(model.state_dict())


def test_saving_twice_gives_identical_bytes(tmp_path):
    model = MstemModel(SMALL, n_stations=3, seed=1)
    a = save_checkpoint(model, tmp_path / "a.ckpt").read_bytes()
    b = save_checkpoint(model, tmp_path / "b.ckpt").read_bytes()
    assert a == b


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT" + bytes(16))
    with pytest.raises(DataError, match="not a forecaster checkpoint"):
        load_checkpoint(path)


def test_truncated_file(tmp_path):
    path = save_checkpoint(MstemModel(SMALL, n_stations=3), tmp_path / "m.ckpt")
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(DataError, match="truncated"):
        load_checkpoint(path)
