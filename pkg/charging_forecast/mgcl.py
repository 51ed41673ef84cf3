"""
Multiscale graph construction and learning.

Each scale subsamples the lookback window, runs two normalized graph
convolutions over the station graph and maps the result into a shared
feature space; the scales are then summed.

Shapes use B for the number of windows in a batch, N for stations, L for the
sampled time length of a scale, h for the hidden width and g for the graph
output width.  Node-major matrices stack the N stations of each window, so
they have B·N rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, DiffTensor
from .errors import ConfigurationError, DimensionError, ParameterError


def scale_temporal(window: np.ndarray, scale: int) -> np.ndarray:
    """Keep every ``scale``-th row counting back from the most recent one.

    Works on a single τ×N window or a B×τ×N stack (time is the second-to-last
    axis).  The rows come back in chronological order.
    """
    if scale < 1:
        raise ParameterError(f"scale must be at least 1, got {scale}")
    tau = window.shape[-2]
    rows = np.arange(tau - 1, -1, -scale)[::-1]
    return window[..., rows, :]


def sampled_length(tau: int, scale: int) -> int:
    return math.ceil(tau / scale) if scale <= tau else 1


@dataclass(frozen=True)
class GraphSpec:
    n_stations: int
    norm_adj: np.ndarray


def build_graph(n_stations: int) -> GraphSpec:
    """Complete graph with self-loops, symmetrically normalized."""
    if n_stations < 1:
        raise ParameterError(f"graph needs at least one station, got {n_stations}")
    adjacency = np.ones((n_stations, n_stations)) - np.eye(n_stations)
    adj_tilde = adjacency + np.eye(n_stations)
    degree = adj_tilde.sum(axis=1)
    norm_adj = adj_tilde / np.sqrt(np.outer(degree, degree))
    return GraphSpec(n_stations=n_stations, norm_adj=norm_adj)


@dataclass
class ScaleBlockParams:
    scale: int
    w1: DiffTensor
    w2: DiffTensor
    gamma: DiffTensor
    beta: DiffTensor
    fusion: DiffTensor
    bn_state: BatchNormState

    @classmethod
    def create(
        cls, scale: int, tau: int, hidden: int, graph_out: int, rng: np.random.Generator
    ) -> "ScaleBlockParams":
        length = sampled_length(tau, scale)
        return cls(
            scale=scale,
            w1=ad.glorot_uniform(rng, length, hidden, name=f"scale{scale}.w1"),
            w2=ad.glorot_uniform(rng, hidden, graph_out, name=f"scale{scale}.w2"),
            gamma=ad.filled((hidden,), 1.0, name=f"scale{scale}.gamma"),
            beta=ad.filled((hidden,), 0.0, name=f"scale{scale}.beta"),
            fusion=ad.glorot_uniform(rng, graph_out, graph_out, name=f"scale{scale}.fusion"),
            bn_state=BatchNormState.create(hidden),
        )

    def parameters(self) -> dict:
        prefix = f"scale{self.scale}"
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.gamma": self.gamma,
            f"{prefix}.beta": self.beta,
            f"{prefix}.fusion": self.fusion,
        }


def node_major(window: np.ndarray) -> np.ndarray:
    """B×L×N (or L×N) → (B·N)×L with stations indexing rows."""
    stack = window if window.ndim == 3 else window[None]
    batch, length, stations = stack.shape
    return np.ascontiguousarray(stack.transpose(0, 2, 1)).reshape(batch * stations, length)


def graph_conv_block(
    scaled: np.ndarray,
    graph: GraphSpec,
    params: ScaleBlockParams,
    *,
    training: bool,
    dropout: float = 0.1,
    rng: Union[np.random.Generator, int, None] = None,
) -> DiffTensor:
    """H = ReLU(BN(Â·V·W1)), R = Dropout(H), G = Â·R·W2; returns (B·N)×g."""
    length = scaled.shape[-2]
    if length != params.w1.shape[0]:
        raise DimensionError(
            f"scale {params.scale}: sampled input has {length} steps but W1 expects {params.w1.shape[0]}"
        )
    if scaled.shape[-1] != graph.n_stations:
        raise DimensionError(
            f"scale {params.scale}: input has {scaled.shape[-1]} stations, graph has {graph.n_stations}"
        )
    v = ad.constant(node_major(scaled))
    mixed = ad.graph_propagate(graph.norm_adj, ad.matmul(v, params.w1))
    hidden = ad.relu(
        ad.batch_norm(mixed, params.gamma, params.beta, training=training, state=params.bn_state)
    )
    kept = ad.dropout(hidden, dropout, training=training, rng=rng)
    return ad.graph_propagate(graph.norm_adj, ad.matmul(kept, params.w2))


def multiscale_fuse(blocks: Sequence[DiffTensor], fusion_maps: Sequence[DiffTensor]) -> DiffTensor:
    """Sum of G_i·W_L_i in ascending scale order."""
    if not blocks:
        raise ConfigurationError("multiscale fusion needs at least one scale")
    if len(blocks) != len(fusion_maps):
        raise ConfigurationError(f"{len(blocks)} scale blocks but {len(fusion_maps)} fusion maps")
    shape = blocks[0].shape
    fused: Optional[DiffTensor] = None
    for block, fusion in zip(blocks, fusion_maps):
        if block.shape != shape:
            raise DimensionError(f"scale blocks disagree in shape: {shape} vs {block.shape}")
        term = ad.matmul(block, fusion)
        fused = term if fused is None else ad.add(fused, term)
    return fused


def mgcl_forward(
    window: np.ndarray,
    graph: GraphSpec,
    blocks: List[ScaleBlockParams],
    *,
    training: bool,
    dropout: float = 0.1,
    rng: Union[np.random.Generator, int, None] = None,
) -> DiffTensor:
    outputs = [
        graph_conv_block(
            scale_temporal(window, block.scale), graph, block,
            training=training, dropout=dropout, rng=rng,
        )
        for block in blocks
    ]
    return multiscale_fuse(outputs, [block.fusion for block in blocks])
