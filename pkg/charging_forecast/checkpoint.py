"""
Versioned binary checkpoints for learned forecasters.

Layout (all integers little-endian)::

    magic        8 bytes   b"EVCSCKPT"
    version      uint16    currently 1
    tag          uint16 length + UTF-8 model tag ("mstem", "gru", ...)
    config       uint32 length + UTF-8 JSON object (sorted keys) holding
                 {"settings": <forecaster settings>, "metadata": {...}}
    count        uint32    number of arrays
    per array:   uint16 length + UTF-8 name, uint8 ndim, ndim × uint32 dims,
                 then prod(dims) float64 values (little-endian, row-major)

Arrays appear in the forecaster's parameter order followed by its buffers
(batch-norm running statistics), which is the order of
:meth:`Forecaster.state_dict`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Dict, Optional, Union

import numpy as np

from .baselines import BaselineConfig
from .errors import DataError
from .model import Forecaster, MstemConfig
from .registry import build_forecaster

MAGIC = b"EVCSCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    tag: str
    settings: Dict[str, Any]
    state: Dict[str, np.ndarray]
    metadata: Dict[str, Any] = field(default_factory=dict)


def _write_text(stream: BinaryIO, text: str, width: str) -> None:
    data = text.encode("utf-8")
    stream.write(struct.pack(f"<{width}", len(data)))
    stream.write(data)


def _read_exact(stream: BinaryIO, size: int) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise DataError("checkpoint is truncated")
    return data


def _read_text(stream: BinaryIO, width: str) -> str:
    (size,) = struct.unpack(f"<{width}", _read_exact(stream, struct.calcsize(f"<{width}")))
    return _read_exact(stream, size).decode("utf-8")


def save_checkpoint(
    forecaster: Forecaster,
    path: Union[str, Path],
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    config = {"settings": forecaster.settings(), "metadata": metadata or {}}
    state = forecaster.state_dict()
    with open(path, "wb") as stream:
        stream.write(MAGIC)
        stream.write(struct.pack("<H", VERSION))
        _write_text(stream, forecaster.tag, "H")
        _write_text(stream, json.dumps(config, sort_keys=True), "I")
        stream.write(struct.pack("<I", len(state)))
        for name, values in state.items():
            values = np.ascontiguousarray(values, dtype="<f8")
            _write_text(stream, name, "H")
            stream.write(struct.pack("<B", values.ndim))
            stream.write(struct.pack(f"<{values.ndim}I", *values.shape))
            stream.write(values.tobytes())
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    try:
        stream = open(path, "rb")
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint not found: {path}") from exc
    with stream:
        if stream.read(len(MAGIC)) != MAGIC:
            raise DataError(f"{path} is not a forecaster checkpoint")
        (version,) = struct.unpack("<H", _read_exact(stream, 2))
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        tag = _read_text(stream, "H")
        config = json.loads(_read_text(stream, "I"))
        (count,) = struct.unpack("<I", _read_exact(stream, 4))
        state: Dict[str, np.ndarray] = {}
        for _ in range(count):
            name = _read_text(stream, "H")
            (ndim,) = struct.unpack("<B", _read_exact(stream, 1))
            dims = struct.unpack(f"<{ndim}I", _read_exact(stream, 4 * ndim)) if ndim else ()
            size = int(np.prod(dims)) if dims else 1
            raw = _read_exact(stream, 8 * size)
            state[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
    return Checkpoint(tag=tag, settings=config["settings"], state=state, metadata=config.get("metadata", {}))


def restore_forecaster(checkpoint: Union[Checkpoint, str, Path]) -> Forecaster:
    """Rebuild a forecaster from its stored settings and load its state."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    settings = dict(checkpoint.settings)
    n_stations = int(settings.pop("n_stations"))
    if checkpoint.tag == "mstem":
        model_config = MstemConfig(**settings)
        baseline_config = BaselineConfig()
    else:
        model_config = MstemConfig(tau=settings["tau"], alpha=settings["alpha"], scales=(1,))
        baseline_config = BaselineConfig(
            hidden=settings.get("hidden", 16),
            dlinear_kernel=settings.get("kernel", 25),
            ma_window=settings.get("width"),
        )
    forecaster = build_forecaster(checkpoint.tag, model_config, n_stations, baseline_config=baseline_config)
    forecaster.load_state_dict(checkpoint.state)
    return forecaster
