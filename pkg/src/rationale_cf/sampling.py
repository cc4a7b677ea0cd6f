"""Fixed-size weighted edge subsets: rationale, masked-kept and complement graphs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import RationaleScores
from .exceptions import ConfigError, ContractError

RATIONALE = "rationale"
MASKED = "masked"
COMPLEMENT = "complement"


def sample_count(rate: float, n: int) -> int:
    # tolerance keeps products like 0.7 * 100 from flooring to 69
    return max(1, int(math.floor(rate * n + 1e-9)))


def sample_weighted(weights, count: int, seed=None) -> np.ndarray:
    """Weighted sample without replacement via Gumbel-top-k.

    Perturbs ``log(w)`` with standard Gumbel noise and keeps the ``count``
    largest keys, which is equivalent to sequential proportional draws
    without replacement. Returns sorted indices into ``weights``.
    """
    w = np.asarray(weights, dtype=np.float64)
    if count > len(w):
        raise ContractError(f"cannot draw {count} of {len(w)} items without replacement")
    if count < 0:
        raise ContractError("count must be non-negative")
    if not np.isfinite(w).all() or (w <= 0).any():
        raise ContractError("weights must be positive and finite")
    if count == len(w):
        return np.arange(len(w))
    rng = np.random.default_rng(seed)
    keys = np.log(w) + rng.gumbel(size=len(w))
    top = np.argpartition(-keys, count - 1)[:count] if count else np.array([], dtype=np.int64)
    return np.sort(top)


def reciprocal_weights(alpha_bar, eps: float = 1e-8) -> np.ndarray:
    """Normalized ``1 / (score + eps)``: low-scored edges become likely to be kept."""
    if eps <= 0:
        raise ConfigError("eps must be positive")
    inv = 1.0 / (np.asarray(alpha_bar, dtype=np.float64) + eps)
    return inv / inv.sum()


@dataclass(frozen=True, eq=False)
class SubgraphSample:
    kind: str
    edges: np.ndarray
    index: np.ndarray
    rate: float
    seed: object = None
    epoch: int = -1
    held_out: np.ndarray | None = field(default=None)

    def __len__(self) -> int:
        return len(self.index)


def _draw(kind, scores: RationaleScores, weights, rate, seed, with_rest=False) -> SubgraphSample:
    if not 0.0 < rate <= 1.0:
        raise ConfigError(f"{kind} rate must lie in (0, 1], got {rate}")
    n = len(scores.edges)
    idx = sample_weighted(weights, sample_count(rate, n), seed)
    rest = None
    if with_rest:
        keep = np.zeros(n, dtype=bool)
        keep[idx] = True
        rest = np.flatnonzero(~keep)
    return SubgraphSample(kind, scores.edges[idx], idx, rate, seed, scores.epoch, rest)


def draw_rationale(scores: RationaleScores, rate: float, seed=None) -> SubgraphSample:
    return _draw(RATIONALE, scores, scores.prob, rate, seed)


def draw_masked(scores: RationaleScores, rate: float, eps: float = 1e-8, seed=None,
                weights=None) -> SubgraphSample:
    """Edges kept after masking; ``held_out`` indexes the edges to reconstruct.

    ``weights`` overrides the reciprocal-score law (used by the masking
    ablations).
    """
    w = reciprocal_weights(scores.alpha_bar, eps) if weights is None else weights
    return _draw(MASKED, scores, w, rate, seed, with_rest=True)


def draw_complement(scores: RationaleScores, rate: float, eps: float = 1e-8, seed=None,
                    masked_rate: float | None = None, weights=None) -> SubgraphSample:
    if masked_rate is not None and not rate < masked_rate:
        raise ConfigError(f"complement rate {rate} must be below mask keep rate {masked_rate}")
    w = reciprocal_weights(scores.alpha_bar, eps) if weights is None else weights
    return _draw(COMPLEMENT, scores, w, rate, seed)


def check_rates(rationale: float, masked: float, complement: float) -> None:
    for name, r in (("rationale", rationale), ("masked", masked), ("complement", complement)):
        if not 0.0 < r <= 1.0:
            raise ConfigError(f"{name} rate must lie in (0, 1], got {r}")
    if not complement < masked:
        raise ConfigError(f"complement rate {complement} must be below mask keep rate {masked}")
