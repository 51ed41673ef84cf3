"""
Mini-batch training with validation-based model selection.

Each epoch shuffles the training windows with a permutation derived from
(seed, epoch), runs forward/backward per batch under a fresh tape, applies
one Adam step, then scores the validation windows in eval mode.  The
parameters of the epoch with the lowest validation MSE are returned.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sized, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator

from utils.tracing import Tracer

from . import autodiff as ad
from .data_pipeline import WindowSet, frame_to_text, write_frame
from .errors import ContractError, NumericError
from .model import Forecaster

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    huber_delta: float = 1.0
    seed: int = 0
    shuffle: bool = True
    select_best: bool = True
    clip_norm: Optional[float] = None

    @model_validator(mode="after")
    def _check(self) -> "TrainConfig":
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epoch count must be at least 1")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.huber_delta <= 0:
            raise ValueError("huber delta must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip norm must be positive when set")
        return self


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_mse: float
    seconds: float


@dataclass
class TrainLog:
    """Per-epoch records; ``metadata`` is written as ``#`` header lines."""

    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    metadata: Dict[str, object] = field(default_factory=dict)

    @property
    def best_val_mse(self) -> float:
        return self.records[self.best_epoch - 1].val_mse

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([asdict(r) for r in self.records], columns=[f.name for f in fields(EpochRecord)])
        frame["seconds"] = frame["seconds"].astype(float).round(3)
        return frame

    def to_csv(self) -> str:
        return frame_to_text(self.to_frame(), self.metadata, float_format="%.10g")

    def write(self, path: Union[str, Path]) -> Path:
        return write_frame(self.to_frame(), path, self.metadata, float_format="%.10g")


def batch_iter(
    windows: Union[int, Sized],
    batch_size: int,
    seed: int,
    epoch: int,
    shuffle: bool = True,
) -> List[np.ndarray]:
    """Index batches for one epoch; the permutation depends only on (seed, epoch)."""
    if batch_size < 1:
        raise ContractError(f"batch size must be at least 1, got {batch_size}")
    count = windows if isinstance(windows, int) else len(windows)
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(count)
    else:
        order = np.arange(count)
    return [order[i:i + batch_size] for i in range(0, count, batch_size)]


def predict_windows(forecaster: Forecaster, inputs: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Eval-mode predictions for a B×τ×N stack, in chunks."""
    if inputs.shape[0] == 0:
        return np.zeros((0, forecaster.alpha, forecaster.n_stations))
    parts = [
        forecaster.forward(inputs[i:i + chunk], training=False).values
        for i in range(0, inputs.shape[0], chunk)
    ]
    return np.concatenate(parts, axis=0)


def validation_mse(forecaster: Forecaster, windows: WindowSet) -> float:
    err = predict_windows(forecaster, windows.inputs) - windows.targets
    return float((err * err).mean())


def train(
    forecaster: Forecaster,
    train_set: WindowSet,
    val_set: WindowSet,
    config: TrainConfig,
    tracer: Optional[Tracer] = None,
) -> Tuple[dict, TrainLog]:
    """Fit ``forecaster`` in place and return (selected state, log)."""
    if not forecaster.trainable:
        raise ContractError(f"{forecaster.tag} is a training-free model; use evaluate instead")
    if len(train_set) == 0 or len(val_set) == 0:
        raise ContractError("training needs nonempty training and validation window sets")

    params = forecaster.parameters()
    adam = ad.AdamState(learning_rate=config.learning_rate)
    dropout_rng = np.random.default_rng(config.seed)
    forecaster.trained = True
    log = TrainLog()
    best_state: Optional[dict] = None
    best_mse = np.inf

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        loss_sum = 0.0
        batches = batch_iter(len(train_set), config.batch_size, config.seed, epoch, config.shuffle)
        for index, batch in enumerate(batches):
            with ad.Tape() as tape:
                prediction = forecaster.forward(train_set.inputs[batch], training=True, rng=dropout_rng)
                loss = ad.huber_loss(prediction, train_set.targets[batch], config.huber_delta)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(
                        f"non-finite loss {value} in epoch {epoch}, batch {index} ({forecaster.tag})"
                    )
                tape.backward(loss)
            if config.clip_norm is not None:
                ad.clip_grad_norm(params, config.clip_norm)
            ad.adam_step(params, adam)
            loss_sum += value * len(batch)

        val = validation_mse(forecaster, val_set)
        record = EpochRecord(
            epoch=epoch,
            train_loss=loss_sum / len(train_set),
            val_mse=val,
            seconds=time.perf_counter() - started,
        )
        log.records.append(record)
        logger.debug("%s epoch %d: loss %.6f val_mse %.6f", forecaster.tag, epoch, record.train_loss, val)
        if tracer is not None:
            tracer.log(
                role="trainer",
                sender=forecaster.tag,
                content=f"epoch {epoch}",
                metadata={"train_loss": record.train_loss, "val_mse": val, "seconds": record.seconds},
            )
        if val < best_mse:
            best_mse = val
            best_state = forecaster.state_dict()
            log.best_epoch = epoch

    if best_state is None:
        raise NumericError(
            f"validation MSE was non-finite in all {config.epochs} epochs ({forecaster.tag})"
        )
    if config.select_best:
        forecaster.load_state_dict(best_state)
    return forecaster.state_dict(), log
