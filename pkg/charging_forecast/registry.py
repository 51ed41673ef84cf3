"""
Forecaster registry.

Maps each model tag to a factory, the same way handlers are registered by key.
Tags are case-insensitive; display names follow the comparison table header.
"""

from __future__ import annotations

from typing import Callable, Dict, Optional, Tuple, Type

from .baselines import (
    BaselineConfig,
    DLinearForecaster,
    GruForecaster,
    HistoricalInertia,
    LstmForecaster,
    MlpForecaster,
    MovingAverage,
)
from .errors import ConfigurationError
from .model import Forecaster, MstemConfig, MstemModel

Factory = Callable[[MstemConfig, BaselineConfig, int, int], Forecaster]

DISPLAY_NAMES = {
    "ma": "MA",
    "hi": "HI",
    "mlp": "MLP",
    "gru": "GRU",
    "lstm": "LSTM",
    "dlinear": "Dlinear",
    "mstem": "MSTEM",
}
MODEL_ORDER = tuple(DISPLAY_NAMES)

_factories: Dict[str, Tuple[Type[Forecaster], Factory]] = {}


def register(tag: str, forecaster_class: Type[Forecaster], factory: Factory) -> None:
    """Register a factory ``(model_config, baseline_config, n_stations, seed) -> Forecaster``.

    ``forecaster_class`` is what the factory builds; its ``trainable`` flag
    answers ``is_trainable`` without constructing a model.
    """
    _factories[tag.lower()] = (forecaster_class, factory)


register("ma", MovingAverage, lambda m, b, n, seed: MovingAverage(m.tau, m.alpha, n, width=b.ma_window))
register("hi", HistoricalInertia, lambda m, b, n, seed: HistoricalInertia(m.tau, m.alpha, n))
register("mlp", MlpForecaster, lambda m, b, n, seed: MlpForecaster(m.tau, m.alpha, n, hidden=b.hidden, seed=seed))
register("gru", GruForecaster, lambda m, b, n, seed: GruForecaster(m.tau, m.alpha, n, hidden=b.hidden, seed=seed))
register("lstm", LstmForecaster, lambda m, b, n, seed: LstmForecaster(m.tau, m.alpha, n, hidden=b.hidden, seed=seed))
register(
    "dlinear",
    DLinearForecaster,
    lambda m, b, n, seed: DLinearForecaster(m.tau, m.alpha, n, kernel=b.dlinear_kernel, seed=seed),
)
register("mstem", MstemModel, lambda m, b, n, seed: MstemModel(m, n, seed=seed))


def normalize_tag(tag: str) -> str:
    key = tag.strip().lower()
    if key not in _factories:
        known = ", ".join(sorted(_factories))
        raise ConfigurationError(f"unknown model tag {tag!r} (known: {known})")
    return key


def display_name(tag: str) -> str:
    return DISPLAY_NAMES.get(tag.lower(), tag.upper())


def build_forecaster(
    tag: str,
    model_config: MstemConfig,
    n_stations: int,
    seed: Optional[int] = None,
    baseline_config: Optional[BaselineConfig] = None,
) -> Forecaster:
    key = normalize_tag(tag)
    seed = model_config.seed if seed is None else seed
    _, factory = _factories[key]
    return factory(model_config, baseline_config or BaselineConfig(), n_stations, seed)


def is_trainable(tag: str) -> bool:
    forecaster_class, _ = _factories[normalize_tag(tag)]
    return forecaster_class.trainable
