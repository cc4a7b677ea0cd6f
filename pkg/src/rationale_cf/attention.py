"""Edge-restricted multi-head attention and the rationale scores derived from it.

Attention for node ``k`` is normalized over the partners of its incident edges
only, never over all nodes, so one pass costs O(|E| d) rather than O(n^2 d).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigError, ContractError, ShapeError


@dataclass(eq=False)
class AttentionParams:
    """Query/key/value maps with the per-head ``(d/H, d)`` blocks stacked row-wise."""

    w_q: ad.Tensor
    w_k: ad.Tensor
    w_v: ad.Tensor
    heads: int

    def __post_init__(self):
        d = self.w_q.rows
        if d % self.heads:
            raise ConfigError(f"embedding size {d} is not divisible by {self.heads} heads")
        for w in (self.w_q, self.w_k, self.w_v):
            if w.shape != (d, d):
                raise ShapeError(f"attention maps must be {(d, d)}, got {w.shape}")

    @classmethod
    def init(cls, d: int, heads: int, rng: np.random.Generator) -> "AttentionParams":
        # each head block is (d/H, d), so that is the fan used for scaling
        dh = d // heads if heads and d % heads == 0 else d

        def block():
            return np.concatenate([ad.glorot_uniform(rng, dh, d) for _ in range(heads)])

        return cls(ad.Tensor.param(block(), "w_q"), ad.Tensor.param(block(), "w_k"),
                   ad.Tensor.param(block(), "w_v"), heads)

    @property
    def dim(self) -> int:
        return self.w_q.rows

    def tensors(self) -> list[ad.Tensor]:
        return [self.w_q, self.w_k, self.w_v]


def head_indicator(d: int, heads: int) -> np.ndarray:
    """``(d, heads)`` 0/1 matrix assigning each embedding column to its head."""
    dh = d // heads
    return np.kron(np.eye(heads), np.ones((dh, 1)))


def directed_pairs(edges) -> tuple[np.ndarray, np.ndarray]:
    """Both directions of each undirected node-index edge: ``[k->k'] + [k'->k]``."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    return src, dst


@dataclass(eq=False)
class AttentionOutput:
    alpha: np.ndarray  # (2|E|, heads), rows ordered as directed_pairs
    src: np.ndarray
    dst: np.ndarray
    z: ad.Tensor


def attend(hbar: ad.Tensor, edges, params: AttentionParams) -> AttentionOutput:
    """Multi-head attention of each node over its edge partners plus a residual.

    ``edges`` holds undirected pairs in unified node indices. Output row ``k``
    is the head-wise concatenation of ``sum_k' alpha[k,k'] W_V h_k'`` plus
    ``h_k``; a node without edges keeps just ``h_k``.
    """
    n, d = hbar.shape
    if d != params.dim:
        raise ShapeError(f"embedding width {d} != attention width {params.dim}")
    src, dst = directed_pairs(edges)
    if len(src) == 0:
        raise ContractError("attend needs at least one edge")
    heads = params.heads
    ind = ad.Tensor(head_indicator(d, heads))
    q = hbar @ params.w_q.T
    k = hbar @ params.w_k.T
    v = hbar @ params.w_v.T
    logits = ad.scale((ad.gather_rows(q, src) * ad.gather_rows(k, dst)) @ ind, 1.0 / np.sqrt(d / heads))
    alpha = ad.segment_softmax(logits, src, n)
    messages = ad.gather_rows(v, dst) * (alpha @ ind.T)
    z = ad.scatter_add_rows(messages, src, n) + hbar
    return AttentionOutput(alpha.value.copy(), src, dst, z)


@dataclass(frozen=True, eq=False)
class RationaleScores:
    edges: np.ndarray  # (|E|, 2) user/item pairs the scores refer to
    alpha_bar: np.ndarray
    prob: np.ndarray
    epoch: int = -1

    def __post_init__(self):
        if len(self.alpha_bar) != len(self.edges) or len(self.prob) != len(self.edges):
            raise ShapeError("scores must have one entry per edge")


def edge_probabilities(alpha: np.ndarray, edges, epoch: int = -1) -> RationaleScores:
    """Head-mean attention per undirected edge and its normalized selection probability.

    Each undirected edge owns two directed attention rows; its score is their
    mean over both directions and all heads.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    edges = np.asarray(edges)
    m = len(edges)
    if alpha.shape[0] != 2 * m:
        raise ShapeError(f"expected {2 * m} directed attention rows, got {alpha.shape[0]}")
    alpha_bar = 0.5 * (alpha[:m] + alpha[m:]).mean(axis=1)
    return RationaleScores(edges, alpha_bar, alpha_bar / alpha_bar.sum(), epoch)


def export_rationales(scores: RationaleScores, path, user_ids=None, item_ids=None,
                      top: int | None = None, ratings=None) -> int:
    """Write ``user_id,item_id,score,probability`` rows by descending score.

    Ties keep edge order. With ``ratings`` an extra ``rating`` column is added.
    Returns the number of rows written.
    """
    order = np.argsort(-scores.alpha_bar, kind="stable")
    if top is not None:
        order = order[:top]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        header = ["user_id", "item_id", "score", "probability"]
        if ratings is not None:
            header.append("rating")
        out.writerow(header)
        for e in order:
            u, i = scores.edges[e]
            row = [
                user_ids[u] if user_ids is not None else int(u),
                item_ids[i] if item_ids is not None else int(i),
                repr(float(scores.alpha_bar[e])),
                repr(float(scores.prob[e])),
            ]
            if ratings is not None:
                row.append(ratings[e])
            out.writerow(row)
    return len(order)
