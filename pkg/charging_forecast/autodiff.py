"""
Reverse-mode differentiation on dense float64 arrays.

Every operation in this module computes its forward value with numpy and, when
a :class:`Tape` is active on the current thread and at least one input needs a
gradient, appends a backward closure to the tape.  Calling
:meth:`Tape.backward` replays those closures in exact reverse order, each one
accumulating into the ``grad`` buffers of its inputs.

Example:

>>> w = DiffTensor([[1.0, 2.0]], name="w")
>>> x = constant([[3.0], [4.0]])
>>> with Tape() as tape:
...     loss = sum_all(matmul(w, x))
...     tape.backward(loss)
>>> w.grad
array([[3., 4.]])

Tapes are thread-local, so independent threads can run their own forward and
backward passes.  Parameters themselves are shared objects and must only be
updated by one writer.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, DimensionError, ParameterError

ArrayLike = Union[np.ndarray, Sequence, float]
Activation = Literal["relu", "sigmoid", "tanh"]
ParamCollection = Union[Sequence["DiffTensor"], Mapping[str, "DiffTensor"]]

_node_ids = itertools.count()
_local = threading.local()


class DiffTensor:
    """A dense float64 array with a same-shape gradient buffer."""

    __slots__ = ("values", "grad", "node_id", "name", "requires_grad", "tape")

    def __init__(
        self,
        values: ArrayLike,
        *,
        name: Optional[str] = None,
        requires_grad: bool = True,
        copy: bool = True,
    ) -> None:
        if copy or not isinstance(values, np.ndarray) or values.dtype != np.float64:
            values = np.array(values, dtype=np.float64)
        self.values: np.ndarray = values
        self.grad: np.ndarray = np.zeros_like(values)
        self.node_id: int = next(_node_ids)
        self.name = name
        self.requires_grad = requires_grad
        self.tape: Optional[Tape] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"DiffTensor{label}(shape={self.shape}, node_id={self.node_id})"


def constant(values: ArrayLike, name: Optional[str] = None) -> DiffTensor:
    """Wrap data that never needs a gradient (inputs, targets)."""
    return DiffTensor(values, name=name, requires_grad=False)


@dataclass
class TapeEntry:
    op: str
    output: DiffTensor
    inputs: Tuple[DiffTensor, ...]
    backward: Callable[[np.ndarray], None]


class Tape:
    """Ordered record of executed operations.

    Entering the tape as a context manager resets it and makes it the active
    tape of the current thread until the block exits.
    """

    def __init__(self) -> None:
        self.entries: List[TapeEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __enter__(self) -> "Tape":
        self.reset()
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc_info: object) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def reset(self) -> None:
        self.entries = []

    def record(
        self,
        op: str,
        output: DiffTensor,
        inputs: Tuple[DiffTensor, ...],
        backward: Callable[[np.ndarray], None],
    ) -> None:
        output.tape = self
        self.entries.append(TapeEntry(op=op, output=output, inputs=inputs, backward=backward))

    def backward(self, loss: DiffTensor) -> None:
        """Populate gradients of every tensor that ``loss`` depends on."""
        if loss.values.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self:
            raise ContractError("loss was not produced on this tape")
        loss.grad[...] = 1.0
        for entry in reversed(self.entries):
            entry.backward(entry.output.grad)


def _tape_stack() -> List[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def current_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def backward(loss: DiffTensor) -> None:
    """Run the backward pass on the tape that recorded ``loss``."""
    if loss.values.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is None:
        raise ContractError("loss was computed without an active tape")
    loss.tape.backward(loss)


def _emit(
    op: str,
    values: np.ndarray,
    inputs: Tuple[DiffTensor, ...],
    backward_fn: Callable[[np.ndarray], None],
) -> DiffTensor:
    needs_grad = any(t.requires_grad for t in inputs)
    out = DiffTensor(values, requires_grad=needs_grad, copy=False)
    tape = current_tape()
    if tape is not None and needs_grad:
        tape.record(op, out, inputs, backward_fn)
    return out


def _as_tensor(x: Union[DiffTensor, ArrayLike]) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else constant(x)


def _same_shape(op: str, a: DiffTensor, b: DiffTensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Linear algebra and elementwise arithmetic
# ---------------------------------------------------------------------------


def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += g @ b.values.T
        if b.requires_grad:
            b.grad += a.values.T @ g

    return _emit("matmul", a.values @ b.values, (a, b), back)


def add(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _same_shape("add", a, b)

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += g
        if b.requires_grad:
            b.grad += g

    return _emit("add", a.values + b.values, (a, b), back)


def sub(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _same_shape("sub", a, b)

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += g
        if b.requires_grad:
            b.grad -= g

    return _emit("sub", a.values - b.values, (a, b), back)


def mul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Elementwise (Hadamard) product."""
    _same_shape("mul", a, b)

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += g * b.values
        if b.requires_grad:
            b.grad += g * a.values

    return _emit("mul", a.values * b.values, (a, b), back)


def scale(x: DiffTensor, factor: float) -> DiffTensor:
    def back(g: np.ndarray) -> None:
        x.grad += factor * g

    return _emit("scale", x.values * factor, (x,), back)


def add_constant(x: DiffTensor, offset: ArrayLike) -> DiffTensor:
    """Add a same-shape array that takes no part in differentiation."""
    offset = np.asarray(offset, dtype=np.float64)
    if offset.shape != x.shape:
        raise DimensionError(f"add_constant: shape mismatch {x.shape} vs {offset.shape}")

    def back(g: np.ndarray) -> None:
        x.grad += g

    return _emit("add_constant", x.values + offset, (x,), back)


def add_bias(x: DiffTensor, bias: DiffTensor) -> DiffTensor:
    """Add a length-f bias to every row of an n×f matrix."""
    if x.ndim != 2 or bias.shape != (x.shape[1],):
        raise DimensionError(f"add_bias: cannot add bias {bias.shape} to rows of {x.shape}")

    def back(g: np.ndarray) -> None:
        if x.requires_grad:
            x.grad += g
        if bias.requires_grad:
            bias.grad += g.sum(axis=0)

    return _emit("add_bias", x.values + bias.values, (x, bias), back)


def concat_columns(parts: Sequence[DiffTensor]) -> DiffTensor:
    """Concatenate n×f_i matrices side by side."""
    if not parts:
        raise DimensionError("concat_columns: nothing to concatenate")
    rows = parts[0].shape[0]
    for part in parts:
        if part.ndim != 2 or part.shape[0] != rows:
            raise DimensionError(
                f"concat_columns: row mismatch {[p.shape for p in parts]}"
            )
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    inputs = tuple(parts)

    def back(g: np.ndarray) -> None:
        for part, lo, hi in zip(inputs, bounds[:-1], bounds[1:]):
            if part.requires_grad:
                part.grad += g[:, lo:hi]

    return _emit("concat_columns", np.concatenate([p.values for p in parts], axis=1), inputs, back)


def permute_reshape(
    x: DiffTensor,
    in_shape: Sequence[int],
    axes: Sequence[int],
    out_shape: Sequence[int],
) -> DiffTensor:
    """View ``x`` as ``in_shape``, transpose by ``axes`` and reshape to ``out_shape``."""
    in_shape = tuple(in_shape)
    axes = tuple(axes)
    if int(np.prod(in_shape)) != x.values.size or int(np.prod(out_shape)) != x.values.size:
        raise DimensionError(
            f"permute_reshape: {x.shape} does not fit {in_shape} -> {tuple(out_shape)}"
        )
    permuted_shape = tuple(in_shape[a] for a in axes)
    inverse = tuple(np.argsort(axes))
    values = x.values.reshape(in_shape).transpose(axes).reshape(out_shape)

    def back(g: np.ndarray) -> None:
        x.grad += g.reshape(permuted_shape).transpose(inverse).reshape(x.shape)

    return _emit("permute_reshape", np.ascontiguousarray(values), (x,), back)


def reshape(x: DiffTensor, shape: Sequence[int]) -> DiffTensor:
    return permute_reshape(x, x.shape, tuple(range(x.ndim)), shape)


def sum_all(x: DiffTensor) -> DiffTensor:
    def back(g: np.ndarray) -> None:
        x.grad += g

    return _emit("sum_all", np.array(x.values.sum()), (x,), back)


def mean_all(x: DiffTensor) -> DiffTensor:
    count = x.values.size

    def back(g: np.ndarray) -> None:
        x.grad += g / count

    return _emit("mean_all", np.array(x.values.mean()), (x,), back)


def graph_propagate(adjacency: np.ndarray, x: DiffTensor) -> DiffTensor:
    """Multiply every window's node block by a fixed N×N adjacency.

    ``x`` is node-major with shape (B·N)×f: rows ``b*N .. b*N+N-1`` hold the N
    stations of window ``b``.
    """
    n = adjacency.shape[0]
    if adjacency.shape != (n, n) or x.ndim != 2 or x.shape[0] % n:
        raise DimensionError(
            f"graph_propagate: adjacency {adjacency.shape} cannot act on {x.shape}"
        )
    batch, features = x.shape[0] // n, x.shape[1]
    blocks = x.values.reshape(batch, n, features)
    values = np.einsum("ij,bjf->bif", adjacency, blocks).reshape(x.shape)

    def back(g: np.ndarray) -> None:
        gb = g.reshape(batch, n, features)
        x.grad += np.einsum("ji,bjf->bif", adjacency, gb).reshape(x.shape)

    return _emit("graph_propagate", values, (x,), back)


# ---------------------------------------------------------------------------
# Activations, normalization, dropout
# ---------------------------------------------------------------------------


def activation(x: DiffTensor, kind: Activation) -> DiffTensor:
    v = x.values
    if kind == "relu":
        out = np.maximum(v, 0.0)
        slope = (v > 0.0).astype(np.float64)
    elif kind == "sigmoid":
        out = 0.5 * (1.0 + np.tanh(0.5 * v))
        slope = out * (1.0 - out)
    elif kind == "tanh":
        out = np.tanh(v)
        slope = 1.0 - out * out
    else:
        raise ParameterError(f"unknown activation {kind!r}")

    def back(g: np.ndarray) -> None:
        x.grad += g * slope

    return _emit(kind, out, (x,), back)


def relu(x: DiffTensor) -> DiffTensor:
    return activation(x, "relu")


def sigmoid(x: DiffTensor) -> DiffTensor:
    return activation(x, "sigmoid")


def tanh(x: DiffTensor) -> DiffTensor:
    return activation(x, "tanh")


@dataclass
class BatchNormState:
    """Running statistics for one batch-normalization layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, features: int) -> "BatchNormState":
        return cls(running_mean=np.zeros(features), running_var=np.ones(features))


def batch_norm(
    x: DiffTensor,
    gamma: DiffTensor,
    beta: DiffTensor,
    *,
    training: bool,
    state: Optional[BatchNormState],
    eps: float = 1e-5,
) -> DiffTensor:
    """Normalize each column of an n×f matrix.

    Training mode uses the batch statistics (population variance) and updates
    the running statistics in ``state``; eval mode uses the running statistics.
    """
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(
            f"batch_norm: gamma {gamma.shape} / beta {beta.shape} do not match {x.shape}"
        )
    n = x.shape[0]
    if n < 1:
        raise DimensionError("batch_norm: empty batch")
    if state is not None:
        eps = state.eps

    if training:
        mean = x.values.mean(axis=0)
        var = x.values.var(axis=0)
        if state is not None:
            unbiased = var * n / (n - 1) if n > 1 else var
            state.running_mean = (1.0 - state.momentum) * state.running_mean + state.momentum * mean
            state.running_var = (1.0 - state.momentum) * state.running_var + state.momentum * unbiased
    else:
        if state is None:
            raise ContractError("batch_norm in eval mode needs running statistics")
        mean, var = state.running_mean, state.running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.values - mean) * inv_std
    out = gamma.values * x_hat + beta.values

    def back(g: np.ndarray) -> None:
        if gamma.requires_grad:
            gamma.grad += (g * x_hat).sum(axis=0)
        if beta.requires_grad:
            beta.grad += g.sum(axis=0)
        if x.requires_grad:
            d_hat = g * gamma.values
            if training:
                x.grad += (inv_std / n) * (
                    n * d_hat - d_hat.sum(axis=0) - x_hat * (d_hat * x_hat).sum(axis=0)
                )
            else:
                x.grad += d_hat * inv_std

    return _emit("batch_norm", out, (x, gamma, beta), back)


def dropout(
    x: DiffTensor,
    p: float,
    *,
    training: bool,
    rng: Union[np.random.Generator, int, None] = None,
) -> DiffTensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) at training time."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        def back_identity(g: np.ndarray) -> None:
            x.grad += g

        return _emit("dropout", x.values.copy(), (x,), back_identity)

    generator = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    mask = (generator.random(x.shape) >= p).astype(np.float64) / (1.0 - p)

    def back(g: np.ndarray) -> None:
        x.grad += g * mask

    return _emit("dropout", x.values * mask, (x,), back)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def huber_loss(pred: DiffTensor, target: Union[DiffTensor, ArrayLike], delta: float = 1.0) -> DiffTensor:
    """Mean Huber loss over all elements."""
    if delta <= 0:
        raise ParameterError(f"huber delta must be positive, got {delta}")
    target_values = target.values if isinstance(target, DiffTensor) else np.asarray(target, dtype=np.float64)
    if target_values.shape != pred.shape:
        raise DimensionError(f"huber_loss: shape mismatch {pred.shape} vs {target_values.shape}")
    err = pred.values - target_values
    abs_err = np.abs(err)
    quadratic = abs_err <= delta
    per_element = np.where(quadratic, 0.5 * err * err, delta * (abs_err - 0.5 * delta))
    count = err.size

    def back(g: np.ndarray) -> None:
        pred.grad += g * np.clip(err, -delta, delta) / count

    return _emit("huber_loss", np.array(per_element.mean()), (pred,), back)


def mse_loss(pred: DiffTensor, target: Union[DiffTensor, ArrayLike]) -> DiffTensor:
    target_values = target.values if isinstance(target, DiffTensor) else np.asarray(target, dtype=np.float64)
    if target_values.shape != pred.shape:
        raise DimensionError(f"mse_loss: shape mismatch {pred.shape} vs {target_values.shape}")
    err = pred.values - target_values
    count = err.size

    def back(g: np.ndarray) -> None:
        pred.grad += g * 2.0 * err / count

    return _emit("mse_loss", np.array((err * err).mean()), (pred,), back)


# ---------------------------------------------------------------------------
# Parameters and optimization
# ---------------------------------------------------------------------------


def _as_list(params: ParamCollection) -> List[DiffTensor]:
    if isinstance(params, Mapping):
        return list(params.values())
    return list(params)


def glorot_uniform(
    rng: np.random.Generator, fan_in: int, fan_out: int, name: Optional[str] = None
) -> DiffTensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return DiffTensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), name=name, copy=False)


def filled(shape: Sequence[int], value: float, name: Optional[str] = None) -> DiffTensor:
    return DiffTensor(np.full(tuple(shape), float(value)), name=name, copy=False)


def zero_grad(params: ParamCollection) -> None:
    for p in _as_list(params):
        p.zero_grad()


def clip_grad_norm(params: ParamCollection, max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    tensors = _as_list(params)
    norm = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in tensors)))
    if np.isfinite(norm) and norm > max_norm > 0:
        factor = max_norm / norm
        for p in tensors:
            p.grad *= factor
    return norm


@dataclass
class AdamState:
    """Optimizer moments and hyperparameters."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: Dict[int, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamCollection, state: AdamState) -> None:
    """Apply one bias-corrected Adam update, then zero the gradients."""
    tensors = _as_list(params)
    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for index, p in enumerate(tensors):
        m = state.first_moment.get(index)
        v = state.second_moment.get(index)
        if m is None or v is None:
            m = np.zeros_like(p.values)
            v = np.zeros_like(p.values)
        elif m.shape != p.shape:
            raise DimensionError(
                f"adam_step: moment shape {m.shape} does not match parameter {p.shape}"
            )
        m = state.beta1 * m + (1.0 - state.beta1) * p.grad
        v = state.beta2 * v + (1.0 - state.beta2) * p.grad * p.grad
        state.first_moment[index] = m
        state.second_moment[index] = v
        p.values -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        p.zero_grad()


# ---------------------------------------------------------------------------
# Finite-difference checking
# ---------------------------------------------------------------------------


def numerical_gradient(
    loss_fn: Callable[[], DiffTensor], tensor: DiffTensor, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` with respect to ``tensor``."""
    grad = np.zeros_like(tensor.values)
    flat = tensor.values.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        upper = loss_fn().item()
        flat[i] = original - h
        lower = loss_fn().item()
        flat[i] = original
        out[i] = (upper - lower) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale_ = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    if scale_ == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric)) / max(scale_, 1e-12)


def gradient_check(
    loss_fn: Callable[[], DiffTensor],
    params: Mapping[str, DiffTensor],
    h: float = 1e-5,
) -> Dict[str, float]:
    """Compare analytic and central-difference gradients for each parameter.

    ``loss_fn`` must be deterministic: it is evaluated once under a tape and
    then repeatedly without one.
    """
    zero_grad(params)
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}
    zero_grad(params)
    return {
        name: relative_error(analytic[name], numerical_gradient(loss_fn, p, h))
        for name, p in params.items()
    }
