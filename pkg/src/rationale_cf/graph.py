"""Bipartite user-item interaction graphs, dataset splits and perturbations.

Nodes use one unified index space: user ``i`` is node ``i`` and item ``j`` is
node ``n_users + j``. Edges are always stored as ``(user, item)`` pairs; the
symmetric node adjacency is derived from them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .autodiff import SparseMatrix
from .exceptions import ConfigError, ContractError, EmptyDatasetError, ParseError, SaturationError

DEFAULT_RATIOS = (0.70, 0.05, 0.25)


def _edge_array(edges) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ContractError(f"edges must be an (n, 2) array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class InteractionGraph:
    n_users: int
    n_items: int
    edges: np.ndarray
    ratings: np.ndarray | None = None
    user_ids: tuple | None = None
    item_ids: tuple | None = None
    duplicates_dropped: int = 0

    def __post_init__(self):
        edges = _edge_array(self.edges)
        if len(edges):
            if edges[:, 0].min() < 0 or edges[:, 0].max() >= self.n_users:
                raise ContractError("user index out of range")
            if edges[:, 1].min() < 0 or edges[:, 1].max() >= self.n_items:
                raise ContractError("item index out of range")
            keys = edges[:, 0] * self.n_items + edges[:, 1]
            if len(np.unique(keys)) != len(keys):
                raise ContractError("duplicate edges in interaction graph")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        if self.ratings is not None:
            ratings = np.asarray(self.ratings, dtype=np.float64)
            if len(ratings) != len(edges):
                raise ContractError("ratings length differs from edge count")
            ratings.setflags(write=False)
            object.__setattr__(self, "ratings", ratings)

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_keys(self) -> np.ndarray:
        return self.edges[:, 0] * self.n_items + self.edges[:, 1]

    def node_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unified-index endpoints ``(user_node, item_node)`` of every edge."""
        return self.edges[:, 0].copy(), self.edges[:, 1] + self.n_users

    def degrees(self) -> np.ndarray:
        return node_degrees(self.n_users, self.n_items, self.edges)

    def adjacency(self) -> sp.csr_matrix:
        """Unweighted symmetric adjacency over the unified node set."""
        u, i = self.node_edges()
        rows = np.concatenate([u, i])
        cols = np.concatenate([i, u])
        mat = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_nodes, self.n_nodes))
        mat.sort_indices()
        return mat

    def user_items(self) -> list[np.ndarray]:
        order = np.lexsort((self.edges[:, 1], self.edges[:, 0]))
        e = self.edges[order]
        bounds = np.searchsorted(e[:, 0], np.arange(self.n_users + 1))
        return [e[bounds[u]:bounds[u + 1], 1] for u in range(self.n_users)]

    def with_edges(self, edges, ratings=None) -> "InteractionGraph":
        return replace(self, edges=_edge_array(edges), ratings=ratings, duplicates_dropped=0)

    def subgraph(self, index) -> "InteractionGraph":
        index = np.asarray(index)
        ratings = None if self.ratings is None else self.ratings[index]
        return self.with_edges(self.edges[index], ratings)


def node_degrees(n_users: int, n_items: int, edges) -> np.ndarray:
    edges = _edge_array(edges)
    deg = np.zeros(n_users + n_items, dtype=np.int64)
    np.add.at(deg, edges[:, 0], 1)
    np.add.at(deg, edges[:, 1] + n_users, 1)
    return deg


def normalized_adjacency(n_users: int, n_items: int, edges) -> SparseMatrix:
    """Symmetric adjacency weighted by ``1/sqrt(d_k d_k')``.

    Degrees are those of ``edges`` itself, so a sparse subgraph is normalized
    by its own connectivity rather than the full graph's.
    """
    edges = _edge_array(edges)
    n = n_users + n_items
    deg = node_degrees(n_users, n_items, edges).astype(np.float64)
    u = edges[:, 0]
    i = edges[:, 1] + n_users
    w = 1.0 / np.sqrt(deg[u] * deg[i])
    return SparseMatrix(n, n, np.concatenate([u, i]), np.concatenate([i, u]), np.concatenate([w, w]))


# ingestion

def _parse_id_order(raw: list[str]) -> dict[str, int]:
    uniq = list(dict.fromkeys(raw))
    try:
        ordered = sorted(uniq, key=int)
    except ValueError:
        ordered = uniq
    return {key: idx for idx, key in enumerate(ordered)}


def ingest(path) -> InteractionGraph:
    """Read ``user<TAB>item[<TAB>rating]`` lines into a reindexed graph.

    Integer ids keep their numeric order; other ids are numbered by first
    appearance. Repeated interactions are dropped (the first one wins) and
    counted in ``duplicates_dropped``.
    """
    path = Path(path)
    users, items, ratings = [], [], []
    has_rating = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) == 1:
                fields = line.split()
            if len(fields) not in (2, 3) or not all(f.strip() for f in fields):
                raise ParseError(f"expected 'user<TAB>item[<TAB>rating]', got {line!r}", lineno)
            rated = len(fields) == 3
            if has_rating is None:
                has_rating = rated
            elif has_rating != rated:
                raise ParseError("rating column present on some lines only", lineno)
            users.append(fields[0].strip())
            items.append(fields[1].strip())
            if rated:
                try:
                    ratings.append(float(fields[2]))
                except ValueError:
                    raise ParseError(f"rating {fields[2]!r} is not a number", lineno) from None
    if not users:
        raise EmptyDatasetError(f"no interactions in {path}")
    umap, imap = _parse_id_order(users), _parse_id_order(items)
    edges = np.array([[umap[u], imap[i]] for u, i in zip(users, items)], dtype=np.int64)
    keys = edges[:, 0] * len(imap) + edges[:, 1]
    _, first = np.unique(keys, return_index=True)
    first.sort()
    dup = len(edges) - len(first)
    return InteractionGraph(
        n_users=len(umap),
        n_items=len(imap),
        edges=edges[first],
        ratings=np.asarray(ratings)[first] if has_rating else None,
        user_ids=tuple(umap),
        item_ids=tuple(imap),
        duplicates_dropped=dup,
    )


def write_tsv(graph: InteractionGraph, path) -> None:
    uid = graph.user_ids or tuple(str(u) for u in range(graph.n_users))
    iid = graph.item_ids or tuple(str(i) for i in range(graph.n_items))
    with Path(path).open("w", encoding="utf-8") as fh:
        for k, (u, i) in enumerate(graph.edges):
            if graph.ratings is not None:
                fh.write(f"{uid[u]}\t{iid[i]}\t{graph.ratings[k]:g}\n")
            else:
                fh.write(f"{uid[u]}\t{iid[i]}\n")


# splitting

@dataclass(frozen=True, eq=False)
class DatasetSplit:
    train: InteractionGraph
    validation: InteractionGraph
    test: InteractionGraph
    seed: int | None = None
    ratios: tuple[float, float, float] = DEFAULT_RATIOS
    meta: dict = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return self.train.n_users

    @property
    def n_items(self) -> int:
        return self.train.n_items

    def counts(self) -> dict[str, int]:
        return {"train": self.train.n_edges, "validation": self.validation.n_edges, "test": self.test.n_edges}

    def merged(self) -> InteractionGraph:
        parts = [self.train, self.validation, self.test]
        edges = np.concatenate([p.edges for p in parts])
        ratings = None
        if all(p.ratings is not None for p in parts):
            ratings = np.concatenate([p.ratings for p in parts])
        return self.train.with_edges(edges, ratings)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, g in (("train", self.train), ("validation", self.validation), ("test", self.test)):
            write_tsv(g, directory / f"{name}.tsv")
        sidecar = {"seed": self.seed, "ratios": list(self.ratios), "counts": self.counts(), **self.meta}
        (directory / "split.json").write_text(json.dumps(sidecar, indent=2) + "\n")

    @classmethod
    def load(cls, directory) -> "DatasetSplit":
        """Load a saved split, re-establishing one shared id space across the parts."""
        directory = Path(directory)
        sidecar = json.loads((directory / "split.json").read_text())
        parts = {}
        raw = {}
        for name in ("train", "validation", "test"):
            rows = []
            p = directory / f"{name}.tsv"
            with p.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.rstrip("\r\n")
                    if line and not line.startswith("#"):
                        rows.append(line.split("\t"))
            raw[name] = rows
        all_rows = [r for rows in raw.values() for r in rows]
        if not all_rows:
            raise EmptyDatasetError(f"saved split in {directory} is empty")
        umap = _parse_id_order([r[0] for r in all_rows])
        imap = _parse_id_order([r[1] for r in all_rows])
        rated = len(all_rows[0]) == 3
        for name, rows in raw.items():
            edges = np.array([[umap[r[0]], imap[r[1]]] for r in rows], dtype=np.int64).reshape(-1, 2)
            ratings = np.array([float(r[2]) for r in rows]) if rated else None
            parts[name] = InteractionGraph(len(umap), len(imap), edges, ratings, tuple(umap), tuple(imap))
        extra = {k: v for k, v in sidecar.items() if k not in ("seed", "ratios", "counts")}
        return cls(parts["train"], parts["validation"], parts["test"], sidecar.get("seed"),
                   tuple(sidecar.get("ratios", DEFAULT_RATIOS)), extra)


def _check_ratios(ratios) -> tuple[float, float, float]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    return ratios


def split(graph: InteractionGraph, ratios=DEFAULT_RATIOS, seed: int = 0) -> DatasetSplit:
    """Uniform per-edge split into train/validation/test.

    Any user left without a training edge gets one of their held-out edges
    swapped with a training edge of a user who can spare one, so partition
    sizes are unchanged.
    """
    ratios = _check_ratios(ratios)
    n = graph.n_edges
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = int(round(ratios[1] * n))
    n_test = int(round(ratios[2] * n))
    n_train = n - n_val - n_test
    part = np.empty(n, dtype=np.int8)
    part[perm[:n_train]] = 0
    part[perm[n_train:n_train + n_val]] = 1
    part[perm[n_train + n_val:]] = 2
    _repair_cold_users(graph, part, rng)
    subs = [graph.subgraph(np.flatnonzero(part == k)) for k in range(3)]
    return DatasetSplit(subs[0], subs[1], subs[2], seed, ratios)


def _repair_cold_users(graph: InteractionGraph, part: np.ndarray, rng: np.random.Generator) -> None:
    users = graph.edges[:, 0]
    train_count = np.bincount(users[part == 0], minlength=graph.n_users)
    total = np.bincount(users, minlength=graph.n_users)
    cold = np.flatnonzero((train_count == 0) & (total > 0))
    for u in cold:
        held = np.flatnonzero((users == u) & (part != 0))
        donors = np.flatnonzero((part == 0) & (train_count[users] > 1))
        if len(donors) == 0:
            break
        e = held[rng.integers(len(held))]
        f = donors[rng.integers(len(donors))]
        part[f], part[e] = part[e], 0
        train_count[users[f]] -= 1
        train_count[u] += 1


# perturbations

def perturb_noise(data: DatasetSplit, ratio: float, seed: int = 0) -> DatasetSplit:
    """Add ``floor(ratio * |E_train|)`` random unobserved edges to the training part.

    Candidates exclude every edge present in any partition, so evaluation
    stays clean.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"noise ratio must lie in [0, 1], got {ratio}")
    train = data.train
    n_new = int(math.floor(ratio * train.n_edges))
    if n_new == 0:
        return data
    n_items = train.n_items
    taken = set(data.merged().edge_keys().tolist())
    free = train.n_users * n_items - len(taken)
    if free < n_new:
        raise SaturationError(f"only {free} unobserved pairs left, cannot inject {n_new}")
    rng = np.random.default_rng(seed)
    new: list[int] = []
    chosen: set[int] = set()
    if free < 4 * n_new:
        pool = np.setdiff1d(np.arange(train.n_users * n_items), np.fromiter(taken, dtype=np.int64))
        new = rng.choice(pool, size=n_new, replace=False).tolist()
    else:
        while len(new) < n_new:
            for key in rng.integers(0, train.n_users * n_items, size=2 * (n_new - len(new))).tolist():
                if key not in taken and key not in chosen:
                    chosen.add(key)
                    new.append(key)
                    if len(new) == n_new:
                        break
    keys = np.asarray(new, dtype=np.int64)
    added = np.stack([keys // n_items, keys % n_items], axis=1)
    ratings = None
    if train.ratings is not None:
        ratings = np.concatenate([train.ratings, np.full(n_new, np.nan)])
    noisy = train.with_edges(np.concatenate([train.edges, added]), ratings)
    return replace(data, train=noisy, meta={**data.meta, "noise_ratio": ratio, "noise_edges": n_new})


def perturb_sparsify(data: DatasetSplit, drop_ratio: float, seed: int = 0) -> DatasetSplit:
    """Remove ``floor(drop_ratio * |E_train|)`` uniformly chosen training edges."""
    if not 0.0 <= drop_ratio < 1.0:
        raise ConfigError(f"drop ratio must lie in [0, 1), got {drop_ratio}")
    train = data.train
    n_drop = int(math.floor(drop_ratio * train.n_edges))
    if n_drop == 0:
        return data
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.permutation(train.n_edges)[n_drop:])
    return replace(data, train=train.subgraph(keep),
                   meta={**data.meta, "drop_ratio": drop_ratio, "dropped_edges": n_drop})
