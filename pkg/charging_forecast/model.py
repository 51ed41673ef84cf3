"""
The full forecaster: graph branch, recurrent branch and residual branch summed
into an α×N prediction, followed by the output clamp.

This module also holds :class:`Forecaster`, the interface shared by the model
and every baseline, so training and evaluation can treat them uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from . import autodiff as ad
from .autodiff import DiffTensor
from .errors import ContractError, DimensionError, ParameterError
from .mgcl import GraphSpec, ScaleBlockParams, build_graph, mgcl_forward, sampled_length
from .tenn import LstmParams, ResidualParams, lstm_forward, residual_fusion


def _int_tuple(value: object) -> object:
    if isinstance(value, str):
        return tuple(int(part) for part in value.replace(" ", "").split(",") if part)
    return value


class MstemConfig(BaseModel):
    """Architecture settings; the defaults are the reference architecture."""

    model_config = ConfigDict(frozen=True)

    tau: int = 24
    alpha: int = 6
    scales: Tuple[int, ...] = (1, 5)
    hidden: int = 16
    graph_out: int = 4
    lstm_hidden: int = 16
    dropout: float = 0.1
    theta: float = 0.0
    eta: Optional[int] = None
    seed: int = 0

    @field_validator("scales", mode="before")
    @classmethod
    def _parse_scales(cls, value: object) -> object:
        return _int_tuple(value)

    @model_validator(mode="after")
    def _check(self) -> "MstemConfig":
        if self.tau < 1 or self.alpha < 1:
            raise ValueError("lookback and horizon must be positive")
        if not self.scales:
            raise ValueError("at least one scale is required")
        if any(s < 1 or s > self.tau for s in self.scales):
            raise ValueError(f"every scale must lie in [1, {self.tau}], got {self.scales}")
        if len(set(self.scales)) != len(self.scales):
            raise ValueError(f"scales must be distinct, got {self.scales}")
        if min(self.hidden, self.graph_out, self.lstm_hidden) < 1:
            raise ValueError("layer widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.theta < 0:
            raise ValueError("output threshold theta must be nonnegative")
        if self.eta is not None and not 1 <= self.eta <= self.tau:
            raise ValueError(f"eta must lie in [1, {self.tau}]")
        return self

    @property
    def residual_lookback(self) -> int:
        return self.alpha if self.eta is None else self.eta


@dataclass
class MstemParams:
    blocks: List[ScaleBlockParams]
    lstm: LstmParams
    residual: ResidualParams
    out_graph: DiffTensor
    out_hidden: DiffTensor

    def parameters(self) -> Dict[str, DiffTensor]:
        named: Dict[str, DiffTensor] = {}
        for block in self.blocks:
            named.update(block.parameters())
        named.update(self.lstm.parameters("lstm"))
        named["residual.w_lo"] = self.residual.w_lo
        named["out.graph"] = self.out_graph
        named["out.hidden"] = self.out_hidden
        return named

    def buffers(self) -> Dict[str, np.ndarray]:
        named = {}
        for block in self.blocks:
            named[f"scale{block.scale}.running_mean"] = block.bn_state.running_mean
            named[f"scale{block.scale}.running_var"] = block.bn_state.running_var
        return named

    def load_buffers(self, buffers: Dict[str, np.ndarray]) -> None:
        for block in self.blocks:
            block.bn_state.running_mean = np.array(buffers[f"scale{block.scale}.running_mean"])
            block.bn_state.running_var = np.array(buffers[f"scale{block.scale}.running_var"])


def init_params(config: MstemConfig, n_stations: int, seed: Optional[int] = None) -> MstemParams:
    """Glorot-uniform weights, zero biases (forget bias 1), BN gamma 1 / beta 0."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    blocks = [
        ScaleBlockParams.create(s, config.tau, config.hidden, config.graph_out, rng)
        for s in sorted(config.scales)
    ]
    lstm = LstmParams.create(n_stations, config.lstm_hidden, rng)
    residual = ResidualParams.create(config.tau, config.alpha, config.eta, rng)
    out_graph = ad.glorot_uniform(rng, config.graph_out, config.alpha, name="out.graph")
    out_hidden = ad.glorot_uniform(rng, config.lstm_hidden, config.alpha * n_stations, name="out.hidden")
    return MstemParams(blocks=blocks, lstm=lstm, residual=residual, out_graph=out_graph, out_hidden=out_hidden)


def parameter_count(
    tau: int,
    alpha: int,
    n_stations: int,
    scales: Tuple[int, ...],
    hidden: int,
    graph_out: int,
    lstm_hidden: int,
) -> int:
    per_scale = sum(
        sampled_length(tau, s) * hidden + 2 * hidden + hidden * graph_out + graph_out * graph_out
        for s in scales
    )
    lstm = 4 * (lstm_hidden + n_stations) * lstm_hidden + 4 * lstm_hidden
    return per_scale + lstm + tau * alpha + graph_out * alpha + lstm_hidden * alpha * n_stations


def mstem_forward(
    window: np.ndarray,
    params: MstemParams,
    config: MstemConfig,
    *,
    training: bool = False,
    rng: Union[np.random.Generator, int, None] = None,
    graph: Optional[GraphSpec] = None,
) -> DiffTensor:
    """P = graph branch + hidden-state branch + residual branch.

    ``window`` is τ×N (result α×N) or B×τ×N (result B×α×N).
    """
    single = window.ndim == 2
    stack = window[None] if single else window
    if stack.ndim != 3 or stack.shape[1] != config.tau:
        raise DimensionError(f"input window {window.shape} does not match lookback {config.tau}")
    batch, _, stations = stack.shape
    alpha = config.alpha
    graph = graph or build_graph(stations)
    if isinstance(rng, int) or rng is None:
        rng = np.random.default_rng(rng)

    try:
        fused = mgcl_forward(stack, graph, params.blocks, training=training, dropout=config.dropout, rng=rng)
        graph_term = ad.permute_reshape(
            ad.matmul(fused, params.out_graph), (batch, stations, alpha), (0, 2, 1), (batch, alpha, stations)
        )
    except DimensionError as exc:
        raise DimensionError(f"graph branch: {exc}") from exc
    try:
        last_hidden = lstm_forward(stack, params.lstm)
        hidden_term = ad.reshape(ad.matmul(last_hidden, params.out_hidden), (batch, alpha, stations))
    except DimensionError as exc:
        raise DimensionError(f"recurrent branch: {exc}") from exc
    try:
        residual_term = residual_fusion(stack, params.residual)
    except DimensionError as exc:
        raise DimensionError(f"residual branch: {exc}") from exc

    prediction = ad.add(ad.add(graph_term, hidden_term), residual_term)
    if single:
        prediction = ad.reshape(prediction, (alpha, stations))
    return prediction


def output_control(prediction: np.ndarray, theta: float = 0.0) -> np.ndarray:
    """max(P - θ, 0) elementwise, on predictions already in kW."""
    if theta < 0:
        raise ParameterError(f"output threshold must be nonnegative, got {theta}")
    return np.maximum(np.asarray(prediction, dtype=np.float64) - theta, 0.0)


class Forecaster:
    """Common surface of the model and the baselines.

    ``forward`` maps a B×τ×N stack of standardized windows to a B×α×N
    prediction tensor; ``predict`` is its eval-mode array form.
    """

    tag: str = ""
    trainable: bool = True

    def __init__(self, tau: int, alpha: int, n_stations: int) -> None:
        self.tau = tau
        self.alpha = alpha
        self.n_stations = n_stations
        self.trained = False

    def forward(
        self,
        window: np.ndarray,
        *,
        training: bool = False,
        rng: Union[np.random.Generator, int, None] = None,
    ) -> DiffTensor:
        raise NotImplementedError

    def parameters(self) -> Dict[str, DiffTensor]:
        return {}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def load_buffers(self, buffers: Dict[str, np.ndarray]) -> None:
        return None

    def settings(self) -> Dict[str, object]:
        """Construction settings stored alongside checkpoints."""
        return {"tau": self.tau, "alpha": self.alpha, "n_stations": self.n_stations}

    def predict(self, window: np.ndarray) -> np.ndarray:
        if self.trainable and not self.trained:
            raise ContractError(f"{self.tag} forecaster has no trained parameters")
        stack = window[None] if window.ndim == 2 else window
        values = self.forward(stack, training=False).values
        return values[0] if window.ndim == 2 else values

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.values.copy() for name, p in self.parameters().items()}
        state.update({name: np.array(b, copy=True) for name, b in self.buffers().items()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.parameters()
        for name, p in params.items():
            if name not in state:
                raise ContractError(f"state is missing parameter {name}")
            values = np.asarray(state[name], dtype=np.float64)
            if values.shape != p.shape:
                raise DimensionError(f"parameter {name}: stored {values.shape}, expected {p.shape}")
            p.values[...] = values
        buffers = {name: state[name] for name in self.buffers() if name in state}
        if buffers:
            self.load_buffers(buffers)
        self.trained = True


class MstemModel(Forecaster):
    tag = "mstem"

    def __init__(self, config: MstemConfig, n_stations: int, seed: Optional[int] = None) -> None:
        super().__init__(config.tau, config.alpha, n_stations)
        self.config = config
        self.graph = build_graph(n_stations)
        self.params = init_params(config, n_stations, seed)

    def forward(self, window, *, training=False, rng=None) -> DiffTensor:
        return mstem_forward(window, self.params, self.config, training=training, rng=rng, graph=self.graph)

    def parameters(self) -> Dict[str, DiffTensor]:
        return self.params.parameters()

    def buffers(self) -> Dict[str, np.ndarray]:
        return self.params.buffers()

    def load_buffers(self, buffers: Dict[str, np.ndarray]) -> None:
        self.params.load_buffers(buffers)

    def settings(self) -> Dict[str, object]:
        return {"n_stations": self.n_stations, **self.config.model_dump()}
