"""
Run configuration: every setting of a pipeline run in one validated object.

Flat keys map onto sections by prefix, e.g. ``MODEL_TAU`` → ``model.tau`` and
``TRAIN_LEARNING_RATE`` → ``train.learning_rate``.  ``RUN_*`` keys set the
top-level fields.  The run seed is copied into the model and training seeds
unless those are given explicitly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Dict, Literal, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils.env_loader import merged_settings

from .baselines import BaselineConfig
from .errors import ConfigurationError
from .model import MstemConfig
from .registry import MODEL_ORDER, normalize_tag
from .training import TrainConfig


def _split_list(value: object) -> object:
    if isinstance(value, str):
        return tuple(part.strip() for part in value.split(",") if part.strip())
    return value


class DataConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    events: Optional[str] = None
    series: Optional[str] = None
    kind: Literal["fast", "slow", "all"] = "all"
    standardize: bool = True
    split: Tuple[float, float, float] = (0.7, 0.1, 0.2)

    @field_validator("split", mode="before")
    @classmethod
    def _parse_split(cls, value: object) -> object:
        return _split_list(value)


class EvalConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    horizons: Tuple[int, ...] = (6, 12, 24)
    models: Tuple[str, ...] = MODEL_ORDER
    metric_units: Literal["kw", "standardized"] = "kw"
    test_stride: Literal["window", "horizon"] = "window"
    forecast_trace_dir: Optional[str] = None

    @field_validator("horizons", "models", mode="before")
    @classmethod
    def _parse_lists(cls, value: object) -> object:
        return _split_list(value)

    @field_validator("models")
    @classmethod
    def _known_models(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        return tuple(dict.fromkeys(normalize_tag(tag) for tag in value))

    @field_validator("horizons")
    @classmethod
    def _distinct_horizons(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        return tuple(dict.fromkeys(value))

    @model_validator(mode="after")
    def _check(self) -> "EvalConfig":
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise ValueError("horizons must be positive")
        if not self.models:
            raise ValueError("at least one model is required")
        return self


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    data: DataConfig = Field(default_factory=DataConfig)
    model: MstemConfig = Field(default_factory=MstemConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    baseline: BaselineConfig = Field(default_factory=BaselineConfig)
    evaluation: EvalConfig = Field(default_factory=EvalConfig)
    model_tag: str = "mstem"
    seed: int = 0
    workers: int = 1
    trace_dir: str = "traces"

    @field_validator("model_tag")
    @classmethod
    def _known_tag(cls, value: str) -> str:
        return normalize_tag(value)

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        if self.workers < 1:
            raise ValueError("worker count must be at least 1")
        return self

    def digest(self) -> str:
        """SHA-256 over every setting that can change results."""
        payload = self.model_dump(mode="json", exclude={"workers": True, "trace_dir": True})
        payload["data"].pop("events", None)
        payload["data"].pop("series", None)
        payload["evaluation"].pop("forecast_trace_dir", None)
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def for_horizon(self, alpha: int) -> "RunConfig":
        return self.model_copy(update={"model": self.model.model_copy(update={"alpha": alpha})})

    def with_seed(self, seed: int) -> "RunConfig":
        return self.model_copy(
            update={
                "seed": seed,
                "model": self.model.model_copy(update={"seed": seed}),
                "train": self.train.model_copy(update={"seed": seed}),
            }
        )


SECTIONS = {
    "DATA": "data",
    "MODEL": "model",
    "TRAIN": "train",
    "BASELINE": "baseline",
    "EVAL": "evaluation",
}
RUN_KEYS = {"MODEL": "model_tag", "SEED": "seed", "WORKERS": "workers", "TRACE_DIR": "trace_dir"}
_NONE_WORDS = {"", "none", "null"}


def run_config_from_flat(values: Mapping[str, str]) -> RunConfig:
    """Build a RunConfig from flat ``SECTION_FIELD=value`` pairs."""
    nested: Dict[str, Dict[str, object]] = {section: {} for section in SECTIONS.values()}
    top: Dict[str, object] = {}
    for raw_key, raw_value in values.items():
        key = raw_key.strip().upper()
        value: object = None if str(raw_value).strip().lower() in _NONE_WORDS else raw_value
        prefix, _, rest = key.partition("_")
        if prefix == "RUN" and rest in RUN_KEYS:
            top[RUN_KEYS[rest]] = value
        elif prefix in SECTIONS and rest:
            nested[SECTIONS[prefix]][rest.lower()] = value
        else:
            raise ConfigurationError(f"unknown configuration key {raw_key!r}")
    for section, fields in nested.items():
        known = _section_fields(section)
        unknown = sorted(set(fields) - known)
        if unknown:
            raise ConfigurationError(f"unknown {section} settings: {', '.join(unknown)}")
    try:
        seed = int(top.get("seed") or 0)
        nested["model"].setdefault("seed", seed)
        nested["train"].setdefault("seed", seed)
        sections = {name: fields for name, fields in nested.items()}
        return RunConfig(**sections, **top)
    except (ValidationError, ValueError) as exc:
        raise ConfigurationError(f"invalid configuration: {exc}") from exc


def _section_fields(section: str) -> set:
    model_type = RunConfig.model_fields[section].annotation
    return set(model_type.model_fields)


def load_run_config(
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, str]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Defaults < config file < EVCS_ environment variables < overrides."""
    try:
        values = merged_settings(config_path, overrides, environ)
    except FileNotFoundError as exc:
        raise ConfigurationError(str(exc)) from exc
    return run_config_from_flat(values)
