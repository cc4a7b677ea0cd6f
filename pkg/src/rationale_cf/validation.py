"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numpy as np

from .exceptions import ContractError
from .graph import InteractionGraph


def check_interactions(X, n_users: int | None = None, n_items: int | None = None) -> InteractionGraph:
    """Coerce ``X`` to an :class:`InteractionGraph`.

    Accepts a graph (returned as is) or an ``(n, 2)`` integer array-like of
    (user, item) pairs. Missing sizes are inferred as ``max index + 1``;
    duplicate pairs are dropped.
    """
    if isinstance(X, InteractionGraph):
        if n_users is not None and X.n_users != n_users or n_items is not None and X.n_items != n_items:
            raise ContractError("graph dimensions differ from the fitted ones")
        return X
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ContractError(f"expected an (n, 2) array of (user, item) pairs, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise ContractError("user and item indices must be integers")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ContractError("indices must be non-negative")
    n_users = int(arr[:, 0].max()) + 1 if n_users is None else n_users
    n_items = int(arr[:, 1].max()) + 1 if n_items is None else n_items
    keys = arr[:, 0] * n_items + arr[:, 1]
    _, first = np.unique(keys, return_index=True)
    return InteractionGraph(n_users, n_items, arr[np.sort(first)])


def check_users(users, n_users: int) -> np.ndarray:
    u = np.atleast_1d(np.asarray(users, dtype=np.int64))
    if u.ndim != 1:
        raise ContractError("users must be a 1-D array of indices")
    if len(u) and (u.min() < 0 or u.max() >= n_users):
        raise KeyError(f"user index out of range [0, {n_users})")
    return u
