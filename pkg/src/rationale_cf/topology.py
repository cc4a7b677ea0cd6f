"""Anchor-based global position signal injected into id embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import shortest_path

from . import autodiff as ad
from .exceptions import ConfigError, ShapeError
from .graph import InteractionGraph

UNREACHABLE = np.inf


def sample_anchors(n_nodes: int, count: int, seed=None) -> np.ndarray:
    """Uniform draw of ``count`` distinct nodes; ``seed`` may be an int or a Generator."""
    rng = np.random.default_rng(seed)
    if count <= 0:
        raise ConfigError("anchor count must be positive")
    if count > n_nodes:
        raise ConfigError(f"anchor count {count} exceeds node count {n_nodes}")
    return np.sort(rng.choice(n_nodes, size=count, replace=False))


def anchor_distances(graph: InteractionGraph, anchors) -> np.ndarray:
    """Hop distance from every node to every anchor, ``inf`` when unreachable.

    Returns an ``(n_nodes, n_anchors)`` array.
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    if len(anchors) == 0:
        return np.zeros((graph.n_nodes, 0))
    dist = shortest_path(graph.adjacency(), method="D", directed=False, unweighted=True, indices=anchors)
    return dist.T.copy()


def correlation_weights(dist: np.ndarray, cutoff: float) -> np.ndarray:
    """``1 / (d + 1)`` for distances within ``cutoff`` hops, else 0."""
    dist = np.asarray(dist, dtype=np.float64)
    with np.errstate(divide="ignore"):
        w = 1.0 / (dist + 1.0)
    return np.where(dist <= cutoff, w, 0.0)


@dataclass(frozen=True, eq=False)
class TopologyContext:
    anchors: np.ndarray
    dist: np.ndarray
    omega: np.ndarray
    cutoff: float

    @classmethod
    def build(cls, graph: InteractionGraph, anchor_count: int, cutoff: float,
              seed=None) -> "TopologyContext":
        anchors = sample_anchors(graph.n_nodes, anchor_count, seed)
        dist = anchor_distances(graph, anchors)
        return cls(anchors, dist, correlation_weights(dist, cutoff), cutoff)

    @property
    def n_anchors(self) -> int:
        return len(self.anchors)


def encode(h: ad.Tensor, ctx: TopologyContext, weights: list[ad.Tensor]) -> ad.Tensor:
    """Refine ``h`` through the anchor layers and add the result back onto it.

    Each layer maps node ``k`` to
    ``W @ sum_a omega[k, a] * [x_k || x_a] / |anchors|``, which splits into a
    self term scaled by the row sum of omega and an omega-weighted anchor mix.
    With no layers the input is returned unchanged.
    """
    if not weights:
        return h
    n, d = h.shape
    if ctx.omega.shape != (n, ctx.n_anchors):
        raise ShapeError(f"omega shape {ctx.omega.shape} does not match {n} nodes")
    omega = ad.Tensor(ctx.omega)
    row_weight = ad.Tensor(ctx.omega.sum(axis=1, keepdims=True))
    inv = 1.0 / ctx.n_anchors
    x = h
    for w in weights:
        if w.shape != (d, 2 * d):
            raise ShapeError(f"topology weight must be {(d, 2 * d)}, got {w.shape}")
        self_part = x * row_weight
        anchor_part = omega @ ad.gather_rows(x, ctx.anchors)
        x = ad.scale(ad.concat_cols([self_part, anchor_part]) @ w.T, inv)
    return h + x
