"""Planted-community interaction data for smoke and acceptance runs."""

from __future__ import annotations

import numpy as np

from .graph import InteractionGraph


def block_dataset(n_users: int = 200, n_items: int = 200, n_blocks: int = 8, n_interactions: int = 4000,
                  noise: float = 0.05, seed: int = 0) -> InteractionGraph:
    """Users and items split into ``n_blocks`` communities.

    Each interaction stays inside the user's community with probability
    ``1 - noise`` and otherwise goes to a uniform item of another community.
    Duplicate draws are retried, so the result has exactly
    ``n_interactions`` distinct edges (each user gets an equal share, +-1).
    """
    rng = np.random.default_rng(seed)
    user_block = np.arange(n_users) % n_blocks
    item_block = np.arange(n_items) % n_blocks
    items_of = [np.flatnonzero(item_block == b) for b in range(n_blocks)]
    others_of = [np.flatnonzero(item_block != b) for b in range(n_blocks)]
    per_user = np.full(n_users, n_interactions // n_users)
    per_user[: n_interactions % n_users] += 1
    edges = []
    for u in range(n_users):
        b = user_block[u]
        if per_user[u] > len(items_of[b]) + len(others_of[b]):
            raise ValueError("more interactions requested than items available")
        chosen: set[int] = set()
        while len(chosen) < per_user[u]:
            inside = rng.random() >= noise
            pool = items_of[b] if inside else others_of[b]
            if inside and all(i in chosen for i in pool):
                pool = others_of[b]
            item = int(pool[rng.integers(len(pool))])
            chosen.add(item)
        edges.extend((u, i) for i in sorted(chosen))
    return InteractionGraph(n_users, n_items, np.array(edges, dtype=np.int64))


def community_labels(n_users: int, n_items: int, n_blocks: int) -> tuple[np.ndarray, np.ndarray]:
    return np.arange(n_users) % n_blocks, np.arange(n_items) % n_blocks
