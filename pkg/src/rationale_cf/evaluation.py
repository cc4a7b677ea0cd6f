"""All-rank top-K metrics with training-item masking."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graph import InteractionGraph

DEFAULT_KS = (10, 20, 40)


def recall_at_k(ranked, relevant, k: int) -> float | None:
    """Share of ``relevant`` found in the first ``k`` of ``ranked``; ``None`` if nothing is relevant."""
    relevant = set(np.asarray(relevant).tolist())
    if not relevant:
        return None
    hits = sum(1 for item in np.asarray(ranked)[:k].tolist() if item in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked, relevant, k: int) -> float | None:
    relevant = set(np.asarray(relevant).tolist())
    if not relevant:
        return None
    dcg = sum(1.0 / np.log2(r + 2) for r, item in enumerate(np.asarray(ranked)[:k].tolist()) if item in relevant)
    idcg = sum(1.0 / np.log2(r + 2) for r in range(min(k, len(relevant))))
    return dcg / idcg


def rank_items(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` best scores per row; ties go to the lower item index."""
    scores = np.atleast_2d(scores)
    k = min(k, scores.shape[1])
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :k]


@dataclass
class EvalReport:
    ks: tuple[int, ...]
    recall: dict[int, float]
    ndcg: dict[int, float]
    n_users: int
    per_user: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> str:
        body = {
            "ks": list(self.ks),
            "recall": {str(k): v for k, v in self.recall.items()},
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
            "n_users": self.n_users,
        }
        return json.dumps(body, indent=2, sort_keys=True)

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def evaluate_scores(scores: np.ndarray, train: InteractionGraph, test: InteractionGraph,
                    ks=DEFAULT_KS, keep_per_user: bool = False) -> EvalReport:
    """Metrics from a full ``(n_users, n_items)`` score matrix.

    Training items are masked out before ranking and users without test
    items are left out of the averages.
    """
    ks = tuple(sorted(ks))
    scores = np.array(scores, dtype=np.float64, copy=True)
    if len(train.edges):
        scores[train.edges[:, 0], train.edges[:, 1]] = -np.inf
    test_items = test.user_items()
    users = [u for u in range(test.n_users) if len(test_items[u])]
    recall = {k: 0.0 for k in ks}
    ndcg = {k: 0.0 for k in ks}
    per_user = {}
    if users:
        top = rank_items(scores[users], max(ks))
        discounts = 1.0 / np.log2(np.arange(2, max(ks) + 2))
        for row, u in enumerate(users):
            rel = test_items[u]
            hit = np.isin(top[row], rel)
            for k in ks:
                hk = hit[:k]
                r = hk.sum() / len(rel)
                n = (discounts[:len(hk)] * hk).sum() / discounts[:min(k, len(rel))].sum()
                recall[k] += r
                ndcg[k] += n
                if keep_per_user:
                    per_user.setdefault(u, {})[k] = (float(r), float(n))
        recall = {k: v / len(users) for k, v in recall.items()}
        ndcg = {k: v / len(users) for k, v in ndcg.items()}
    return EvalReport(ks, recall, ndcg, len(users), per_user)


def popularity_scores(train: InteractionGraph) -> np.ndarray:
    """Every user gets the same item ranking: training interaction counts."""
    counts = np.bincount(train.edges[:, 1], minlength=train.n_items).astype(np.float64)
    return np.tile(counts, (train.n_users, 1))
