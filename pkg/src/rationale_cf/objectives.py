"""Loss terms and their weighted combination.

``L_RCS`` in the combined objective is realized by the masked reconstruction
loss :func:`loss_mae`; no other reconstruction term exists to fill it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .encoders import lgcn, pair_scores
from .exceptions import ConfigError, ContractError, NonFiniteError

FULL_SOFTMAX_MAX_ITEMS = 50_000

LOSS_FIELDS = ("l_rec", "l_mae", "l_rd", "l_cir", "l_reg", "total")


def loss_rd(z: ad.Tensor, n_users: int, triplets, train_keys=None, n_items: int | None = None) -> ad.Tensor:
    """Pairwise ranking loss ``sum softplus(-(y_pos - y_neg))``.

    ``triplets`` is an ``(n, 3)`` array of (user, positive item, negative
    item). Passing ``train_keys`` (``user * n_items + item`` of the training
    edges) together with ``n_items`` validates every triplet first.
    """
    t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    if train_keys is not None:
        if n_items is None:
            raise ContractError("n_items is required to validate triplets")
        keys = np.asarray(train_keys)
        if not np.isin(t[:, 0] * n_items + t[:, 1], keys).all():
            raise ContractError("a positive pair is not a training edge")
        if np.isin(t[:, 0] * n_items + t[:, 2], keys).any():
            raise ContractError("a negative pair is a training edge")
    pos = pair_scores(z, n_users, t[:, 0], t[:, 1])
    neg = pair_scores(z, n_users, t[:, 0], t[:, 2])
    return ad.sum(ad.softplus(neg - pos))


def loss_mae(s: ad.Tensor, n_users: int, held_out_edges) -> ad.Tensor:
    """Negative summed dot product over the masked-out edges (unbounded below)."""
    e = np.asarray(held_out_edges, dtype=np.int64).reshape(-1, 2)
    if len(e) == 0:
        warnings.warn("no masked edges to reconstruct; reconstruction loss is 0", stacklevel=2)
        return ad.Tensor(np.zeros((1, 1)))
    return ad.scale(ad.sum(pair_scores(s, n_users, e[:, 0], e[:, 1])), -1.0)


def loss_cir(h: ad.Tensor, rationale_adj: ad.SparseMatrix, complement_adj: ad.SparseMatrix,
             layers: int, tau: float) -> ad.Tensor:
    """``log sum_k exp(cos(e_k^R, e_k^C) / tau)`` over all nodes."""
    if tau <= 0:
        raise ConfigError("temperature must be positive")
    e_r = lgcn(h, rationale_adj, layers)
    e_c = lgcn(h, complement_adj, layers)
    cos = ad.cosine_rows(e_r, e_c)
    return ad.logsumexp_rows(ad.transpose(ad.scale(cos, 1.0 / tau)))


def loss_rec(s: ad.Tensor, n_users: int, n_items: int, positives, mode: str = "full",
             negatives: int = 256, rng: np.random.Generator | None = None) -> ad.Tensor:
    """Softmax cross-entropy of each positive item against the candidate items.

    ``mode="full"`` uses all items as candidates (the positive included);
    ``mode="sampled"`` uses the positive plus ``negatives`` uniform draws.
    """
    p = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    if len(p) == 0:
        return ad.Tensor(np.zeros((1, 1)))
    users, items = p[:, 0], p[:, 1]
    pos = ad.sum(pair_scores(s, n_users, users, items))
    if mode == "full":
        uniq, inv = np.unique(users, return_inverse=True)
        item_rows = ad.slice_rows(s, n_users, n_users + n_items)
        logits = ad.gather_rows(s, uniq) @ ad.transpose(item_rows)
        lse = ad.gather_rows(ad.logsumexp_rows(logits), inv)
        return ad.sum(lse) - pos
    if mode == "sampled":
        rng = np.random.default_rng(rng)
        cand = np.concatenate([items[:, None], rng.integers(0, n_items, size=(len(p), negatives))], axis=1)
        k = cand.shape[1]
        dots = pair_scores(s, n_users, np.repeat(users, k), cand.reshape(-1))
        lse = ad.logsumexp_rows(ad.reshape(dots, len(p), k))
        return ad.sum(lse) - pos
    raise ConfigError(f"unknown rec loss mode {mode!r}")


def resolve_rec_mode(mode: str, n_items: int) -> str:
    if mode == "auto":
        return "full" if n_items <= FULL_SOFTMAX_MAX_ITEMS else "sampled"
    return mode


def loss_reg(tensors) -> ad.Tensor:
    """Squared Frobenius norm summed over parameter tensors."""
    total = None
    for t in tensors:
        term = ad.sum(ad.square(t))
        total = term if total is None else total + term
    return total if total is not None else ad.Tensor(np.zeros((1, 1)))


@dataclass
class LossBreakdown:
    l_rec: float
    l_mae: float
    l_rd: float
    l_cir: float
    l_reg: float
    total: float

    def as_row(self) -> list[float]:
        return [getattr(self, f) for f in LOSS_FIELDS]

    def __add__(self, other: "LossBreakdown") -> "LossBreakdown":
        return LossBreakdown(*(a + b for a, b in zip(self.as_row(), other.as_row())))

    @classmethod
    def zero(cls) -> "LossBreakdown":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def combine(l_rec, l_mae, l_rd, l_cir, l_reg, lambda1: float, lambda2: float, lambda3: float):
    """Weighted total as a tensor plus the per-term breakdown.

    Terms may be tensors or ``None`` (treated as 0). A term whose weight is 0
    contributes nothing to the graph.
    """
    def val(t):
        return 0.0 if t is None else (t.item() if isinstance(t, ad.Tensor) else float(t))

    parts = [(1.0, l_rec), (1.0, l_mae), (lambda1, l_rd), (lambda2, l_cir), (lambda3, l_reg)]
    total = None
    for w, t in parts:
        if t is None or w == 0.0:
            continue
        term = t if w == 1.0 else ad.scale(_as_t(t), w)
        total = term if total is None else total + term
    if total is None:
        total = ad.Tensor(np.zeros((1, 1)))
    vals = [val(t) for _, t in parts]
    breakdown = LossBreakdown(*vals, total=_as_t(total).item())
    for name, v in zip(LOSS_FIELDS, breakdown.as_row()):
        if not np.isfinite(v):
            raise NonFiniteError(f"{name} is not finite")
    return _as_t(total), breakdown


def total_loss(l_rec, l_mae, l_rd, l_cir, l_reg, lambda1: float = 1.0, lambda2: float = 1e-2,
               lambda3: float = 1e-5) -> LossBreakdown:
    return combine(l_rec, l_mae, l_rd, l_cir, l_reg, lambda1, lambda2, lambda3)[1]


def _as_t(x):
    return x if isinstance(x, ad.Tensor) else ad.Tensor(np.array([[float(x)]]))
