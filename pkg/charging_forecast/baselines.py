"""
Comparison forecasters.

Two are training-free (moving average and historical inertia); four are
learned with the same optimizer, loss and budget as the main model (MLP, GRU,
LSTM and the decomposition-linear model).  All of them take B×τ×N standardized
windows and return B×α×N predictions through the :class:`Forecaster`
interface.
"""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from . import autodiff as ad
from .autodiff import DiffTensor
from .errors import ParameterError
from .model import Forecaster
from .tenn import LstmParams, lstm_forward


class BaselineConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    ma_window: Optional[int] = None
    hidden: int = 16
    dlinear_kernel: int = 25

    @model_validator(mode="after")
    def _check(self) -> "BaselineConfig":
        if self.ma_window is not None and self.ma_window < 1:
            raise ValueError("moving-average window must be positive")
        if self.hidden < 1 or self.dlinear_kernel < 1:
            raise ValueError("hidden width and decomposition kernel must be positive")
        return self


def _stack(window: np.ndarray) -> np.ndarray:
    return window[None] if window.ndim == 2 else window


def ma_forecast(window: np.ndarray, width: int, alpha: int) -> np.ndarray:
    """Per-station mean of the last ``width`` rows, repeated for α steps."""
    tau = window.shape[-2]
    if not 1 <= width <= tau:
        raise ParameterError(f"moving-average window {width} must lie in [1, {tau}]")
    mean = window[..., tau - width:, :].mean(axis=-2, keepdims=True)
    reps = [1] * window.ndim
    reps[-2] = alpha
    return np.tile(mean, reps)


def hi_forecast(window: np.ndarray, alpha: int) -> np.ndarray:
    """The last α observed rows, replayed as the forecast."""
    tau = window.shape[-2]
    if alpha > tau:
        raise ParameterError(f"horizon {alpha} exceeds lookback {tau} for historical inertia")
    return window[..., tau - alpha:, :].copy()


class MovingAverage(Forecaster):
    tag = "ma"
    trainable = False

    def __init__(self, tau: int, alpha: int, n_stations: int, width: Optional[int] = None) -> None:
        super().__init__(tau, alpha, n_stations)
        self.width = tau if width is None else width
        if not 1 <= self.width <= tau:
            raise ParameterError(f"moving-average window {self.width} must lie in [1, {tau}]")

    def forward(self, window, *, training=False, rng=None) -> DiffTensor:
        return ad.constant(ma_forecast(_stack(window), self.width, self.alpha))

    def settings(self) -> Dict[str, object]:
        return {**super().settings(), "width": self.width}


class HistoricalInertia(Forecaster):
    tag = "hi"
    trainable = False

    def __init__(self, tau: int, alpha: int, n_stations: int) -> None:
        super().__init__(tau, alpha, n_stations)
        if alpha > tau:
            raise ParameterError(f"horizon {alpha} exceeds lookback {tau} for historical inertia")

    def forward(self, window, *, training=False, rng=None) -> DiffTensor:
        return ad.constant(hi_forecast(_stack(window), self.alpha))


class MlpForecaster(Forecaster):
    """Flattened window → hidden ReLU layer → α·N outputs."""

    tag = "mlp"

    def __init__(self, tau: int, alpha: int, n_stations: int, hidden: int = 16, seed: int = 0) -> None:
        super().__init__(tau, alpha, n_stations)
        rng = np.random.default_rng(seed)
        self.hidden = hidden
        self.w1 = ad.glorot_uniform(rng, tau * n_stations, hidden, name="mlp.w1")
        self.b1 = ad.filled((hidden,), 0.0, name="mlp.b1")
        self.w2 = ad.glorot_uniform(rng, hidden, alpha * n_stations, name="mlp.w2")
        self.b2 = ad.filled((alpha * n_stations,), 0.0, name="mlp.b2")

    def forward(self, window, *, training=False, rng=None) -> DiffTensor:
        stack = _stack(window)
        batch = stack.shape[0]
        flat = ad.constant(stack.reshape(batch, self.tau * self.n_stations))
        hidden = ad.relu(ad.add_bias(ad.matmul(flat, self.w1), self.b1))
        out = ad.add_bias(ad.matmul(hidden, self.w2), self.b2)
        return ad.reshape(out, (batch, self.alpha, self.n_stations))

    def parameters(self) -> Dict[str, DiffTensor]:
        return {"mlp.w1": self.w1, "mlp.b1": self.b1, "mlp.w2": self.w2, "mlp.b2": self.b2}

    def settings(self) -> Dict[str, object]:
        return {**super().settings(), "hidden": self.hidden}


class _RecurrentHead:
    """Final hidden state → full linear map onto every (step, station) cell."""

    def _init_head(self, hidden: int, rng: np.random.Generator, prefix: str) -> None:
        self.head_w = ad.glorot_uniform(rng, hidden, self.alpha * self.n_stations, name=f"{prefix}.head_w")
        self.head_b = ad.filled((self.alpha * self.n_stations,), 0.0, name=f"{prefix}.head_b")

    def _head(self, last_hidden: DiffTensor, batch: int) -> DiffTensor:
        out = ad.add_bias(ad.matmul(last_hidden, self.head_w), self.head_b)
        return ad.reshape(out, (batch, self.alpha, self.n_stations))


class GruForecaster(_RecurrentHead, Forecaster):
    """Single-layer GRU over the window rows."""

    tag = "gru"

    def __init__(self, tau: int, alpha: int, n_stations: int, hidden: int = 16, seed: int = 0) -> None:
        super().__init__(tau, alpha, n_stations)
        rng = np.random.default_rng(seed)
        self.hidden = hidden
        self.gates = {
            name: ad.glorot_uniform(rng, hidden + n_stations, hidden, name=f"gru.w_{name}")
            for name in ("z", "r", "n")
        }
        self.biases = {name: ad.filled((hidden,), 0.0, name=f"gru.b_{name}") for name in ("z", "r", "n")}
        self._init_head(hidden, rng, "gru")

    def forward(self, window, *, training=False, rng=None) -> DiffTensor:
        stack = _stack(window)
        batch = stack.shape[0]
        h = ad.constant(np.zeros((batch, self.hidden)))
        for t in range(stack.shape[1]):
            x = ad.constant(stack[:, t, :])
            joined = ad.concat_columns([h, x])
            z = ad.sigmoid(ad.add_bias(ad.matmul(joined, self.gates["z"]), self.biases["z"]))
            r = ad.sigmoid(ad.add_bias(ad.matmul(joined, self.gates["r"]), self.biases["r"]))
            reset_joined = ad.concat_columns([ad.mul(r, h), x])
            n = ad.tanh(ad.add_bias(ad.matmul(reset_joined, self.gates["n"]), self.biases["n"]))
            # (1 - z)·n + z·h
            h = ad.add(n, ad.mul(z, ad.sub(h, n)))
        return self._head(h, batch)

    def parameters(self) -> Dict[str, DiffTensor]:
        named = {f"gru.w_{k}": v for k, v in self.gates.items()}
        named.update({f"gru.b_{k}": v for k, v in self.biases.items()})
        named.update({"gru.head_w": self.head_w, "gru.head_b": self.head_b})
        return named

    def settings(self) -> Dict[str, object]:
        return {**super().settings(), "hidden": self.hidden}


class LstmForecaster(_RecurrentHead, Forecaster):
    """The recurrent cell of the main model on its own, with a linear head."""

    tag = "lstm"

    def __init__(self, tau: int, alpha: int, n_stations: int, hidden: int = 16, seed: int = 0) -> None:
        super().__init__(tau, alpha, n_stations)
        rng = np.random.default_rng(seed)
        self.hidden = hidden
        self.cell = LstmParams.create(n_stations, hidden, rng, prefix="lstm")
        self._init_head(hidden, rng, "lstm")

    def forward(self, window, *, training=False, rng=None) -> DiffTensor:
        stack = _stack(window)
        return self._head(lstm_forward(stack, self.cell), stack.shape[0])

    def parameters(self) -> Dict[str, DiffTensor]:
        named = self.cell.parameters("lstm")
        named.update({"lstm.head_w": self.head_w, "lstm.head_b": self.head_b})
        return named

    def settings(self) -> Dict[str, object]:
        return {**super().settings(), "hidden": self.hidden}


def decompose(window: np.ndarray, kernel: int = 25) -> tuple:
    """Split each station's series into (trend, remainder) along time.

    The trend is a centred moving average over edge-replicated padding, so it
    has the same length as the input and trend + remainder == input.
    """
    if kernel < 1:
        raise ParameterError(f"decomposition kernel must be positive, got {kernel}")
    front = (kernel - 1) // 2
    back = kernel - 1 - front
    axis = window.ndim - 2
    head = np.repeat(np.take(window, [0], axis=axis), front, axis=axis)
    tail = np.repeat(np.take(window, [-1], axis=axis), back, axis=axis)
    padded = np.concatenate([head, window, tail], axis=axis)
    cumulative = np.cumsum(padded, axis=axis)
    zero = np.zeros_like(np.take(cumulative, [0], axis=axis))
    cumulative = np.concatenate([zero, cumulative], axis=axis)
    length = window.shape[axis]
    upper = np.take(cumulative, np.arange(kernel, kernel + length), axis=axis)
    lower = np.take(cumulative, np.arange(0, length), axis=axis)
    trend = (upper - lower) / kernel
    return trend, window - trend


class DLinearForecaster(Forecaster):
    """Trend and remainder each mapped τ→α by a shared per-station linear map."""

    tag = "dlinear"

    def __init__(self, tau: int, alpha: int, n_stations: int, kernel: int = 25, seed: int = 0) -> None:
        super().__init__(tau, alpha, n_stations)
        self.kernel = kernel
        self.trend_w = ad.filled((tau, alpha), 1.0 / tau, name="dlinear.trend_w")
        self.trend_b = ad.filled((alpha,), 0.0, name="dlinear.trend_b")
        self.remainder_w = ad.filled((tau, alpha), 1.0 / tau, name="dlinear.remainder_w")
        self.remainder_b = ad.filled((alpha,), 0.0, name="dlinear.remainder_b")

    def forward(self, window, *, training=False, rng=None) -> DiffTensor:
        stack = _stack(window)
        batch = stack.shape[0]
        trend, remainder = decompose(stack, self.kernel)

        def node_rows(part: np.ndarray) -> DiffTensor:
            rows = np.ascontiguousarray(part.transpose(0, 2, 1)).reshape(batch * self.n_stations, self.tau)
            return ad.constant(rows)

        mapped = ad.add(
            ad.add_bias(ad.matmul(node_rows(trend), self.trend_w), self.trend_b),
            ad.add_bias(ad.matmul(node_rows(remainder), self.remainder_w), self.remainder_b),
        )
        return ad.permute_reshape(
            mapped, (batch, self.n_stations, self.alpha), (0, 2, 1), (batch, self.alpha, self.n_stations)
        )

    def parameters(self) -> Dict[str, DiffTensor]:
        return {
            "dlinear.trend_w": self.trend_w,
            "dlinear.trend_b": self.trend_b,
            "dlinear.remainder_w": self.remainder_w,
            "dlinear.remainder_b": self.remainder_b,
        }

    def settings(self) -> Dict[str, object]:
        return {**super().settings(), "kernel": self.kernel}


def mlp_forecast(window: np.ndarray, forecaster: MlpForecaster) -> np.ndarray:
    return forecaster.predict(window)


def gru_forecast(window: np.ndarray, forecaster: GruForecaster) -> np.ndarray:
    return forecaster.predict(window)


def lstm_baseline_forecast(window: np.ndarray, forecaster: LstmForecaster) -> np.ndarray:
    return forecaster.predict(window)


def dlinear_forecast(window: np.ndarray, forecaster: DLinearForecaster) -> np.ndarray:
    return forecaster.predict(window)
