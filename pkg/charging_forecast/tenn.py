"""
Temporal enhanced network: an LSTM over the raw window and a residual path
that adds recent history to a learned temporal linear map.

Gate weights act on the row vector ``[h, x]`` from the right, so each gate
matrix is (d_h + N) × d_h and a batch of B windows is processed as B rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor
from .errors import ContractError, DimensionError, ParameterError

GATES = ("f", "i", "c", "o")


@dataclass
class LstmParams:
    w_f: DiffTensor
    w_i: DiffTensor
    w_c: DiffTensor
    w_o: DiffTensor
    b_f: DiffTensor
    b_i: DiffTensor
    b_c: DiffTensor
    b_o: DiffTensor

    @property
    def hidden(self) -> int:
        return self.w_f.shape[1]

    @property
    def inputs(self) -> int:
        return self.w_f.shape[0] - self.hidden

    @classmethod
    def create(
        cls, n_inputs: int, hidden: int, rng: np.random.Generator, prefix: str = "lstm"
    ) -> "LstmParams":
        weights = {
            f"w_{g}": ad.glorot_uniform(rng, hidden + n_inputs, hidden, name=f"{prefix}.w_{g}")
            for g in GATES
        }
        biases = {
            f"b_{g}": ad.filled((hidden,), 1.0 if g == "f" else 0.0, name=f"{prefix}.b_{g}")
            for g in GATES
        }
        return cls(**weights, **biases)

    def parameters(self, prefix: str = "lstm") -> Dict[str, DiffTensor]:
        named = {}
        for g in GATES:
            named[f"{prefix}.w_{g}"] = getattr(self, f"w_{g}")
        for g in GATES:
            named[f"{prefix}.b_{g}"] = getattr(self, f"b_{g}")
        return named


@dataclass
class LstmState:
    h: DiffTensor
    c: DiffTensor

    @classmethod
    def zeros(cls, batch: int, hidden: int) -> "LstmState":
        return cls(h=ad.constant(np.zeros((batch, hidden))), c=ad.constant(np.zeros((batch, hidden))))


def _gate(joined: DiffTensor, weight: DiffTensor, bias: DiffTensor, name: str) -> DiffTensor:
    if weight.shape[0] != joined.shape[1] or bias.shape != (weight.shape[1],):
        raise DimensionError(
            f"gate {name}: weight {weight.shape} / bias {bias.shape} cannot act on [h, x] {joined.shape}"
        )
    return ad.add_bias(ad.matmul(joined, weight), bias)


def lstm_cell_step(x: DiffTensor, state: LstmState, params: LstmParams) -> LstmState:
    """One step: forget/input/output gates, candidate cell, new (h, c)."""
    if x.ndim == 1:
        x = ad.reshape(x, (1, x.shape[0]))
    joined = ad.concat_columns([state.h, x])
    f = ad.sigmoid(_gate(joined, params.w_f, params.b_f, "forget"))
    i = ad.sigmoid(_gate(joined, params.w_i, params.b_i, "input"))
    candidate = ad.tanh(_gate(joined, params.w_c, params.b_c, "candidate"))
    c = ad.add(ad.mul(f, state.c), ad.mul(i, candidate))
    o = ad.sigmoid(_gate(joined, params.w_o, params.b_o, "output"))
    h = ad.mul(o, ad.tanh(c))
    return LstmState(h=h, c=c)


def lstm_forward(window: np.ndarray, params: LstmParams) -> DiffTensor:
    """Fold the cell over the rows of a τ×N window (or B×τ×N stack) from a zero state.

    Returns the final hidden states, B×d_h (1×d_h for a single window).
    """
    stack = window if window.ndim == 3 else window[None]
    batch, steps, _ = stack.shape
    if steps == 0:
        raise ContractError("lstm_forward needs at least one time step")
    state = LstmState.zeros(batch, params.hidden)
    for t in range(steps):
        state = lstm_cell_step(ad.constant(stack[:, t, :]), state, params)
    return state.h


@dataclass
class ResidualParams:
    w_lo: DiffTensor
    eta: int

    @classmethod
    def create(
        cls, tau: int, alpha: int, eta: Optional[int], rng: np.random.Generator
    ) -> "ResidualParams":
        eta = alpha if eta is None else eta
        if not 1 <= eta <= tau:
            raise ParameterError(f"residual lookback eta={eta} must lie in [1, {tau}]")
        return cls(w_lo=ad.glorot_uniform(rng, tau, alpha, name="residual.w_lo"), eta=eta)


def history_slice(window: np.ndarray, eta: int, alpha: int) -> np.ndarray:
    """Last ``eta`` rows of each window, shaped to α rows.

    Zero rows are added on top when η < α; when η > α only the most recent α
    rows remain.
    """
    tau = window.shape[-2]
    if eta > tau:
        raise ParameterError(f"residual lookback eta={eta} exceeds window length {tau}")
    recent = window[..., tau - eta:, :]
    if eta >= alpha:
        return np.ascontiguousarray(recent[..., eta - alpha:, :])
    pad_shape = list(recent.shape)
    pad_shape[-2] = alpha - eta
    return np.concatenate([np.zeros(pad_shape), recent], axis=-2)


def residual_fusion(window: np.ndarray, params: ResidualParams) -> DiffTensor:
    """History slice plus the time-axis linear map of the window.

    Returns B×α×N for a B×τ×N stack, or α×N for a single window.
    """
    single = window.ndim == 2
    stack = window[None] if single else window
    batch, tau, stations = stack.shape
    if params.w_lo.shape[0] != tau:
        raise DimensionError(f"residual map expects {params.w_lo.shape[0]} steps, window has {tau}")
    alpha = params.w_lo.shape[1]
    history = history_slice(stack, params.eta, alpha)
    v = ad.constant(np.ascontiguousarray(stack.transpose(0, 2, 1)).reshape(batch * stations, tau))
    linear = ad.permute_reshape(
        ad.matmul(v, params.w_lo), (batch, stations, alpha), (0, 2, 1), (batch, alpha, stations)
    )
    fused = ad.add_constant(linear, history)
    if single:
        fused = ad.reshape(fused, (alpha, stations))
    return fused
