"""Model parameters, LightGCN propagation and the two forward branches.

Edge arguments are ``(user, item)`` pairs; they are shifted into unified node
indices internally.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import topology
from .attention import AttentionParams, attend
from .exceptions import ContractError, ShapeError
from .graph import normalized_adjacency

CHECKPOINT_FORMAT = "rationale-cf-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class ModelParams:
    n_users: int
    n_items: int
    embedding: ad.Tensor
    topo: list[ad.Tensor]
    attn: AttentionParams
    mlp: list[ad.Tensor] = field(default_factory=list)

    def __post_init__(self):
        n, d = self.embedding.shape
        if n != self.n_users + self.n_items:
            raise ShapeError(f"embedding table has {n} rows for {self.n_users + self.n_items} nodes")
        if self.attn.dim != d:
            raise ShapeError("attention width differs from embedding width")
        for w in self.topo:
            if w.shape != (d, 2 * d):
                raise ShapeError(f"topology weight must be {(d, 2 * d)}, got {w.shape}")

    @classmethod
    def init(cls, n_users: int, n_items: int, d: int, heads: int, topo_layers: int,
             rng: np.random.Generator, mlp: bool = False) -> "ModelParams":
        n = n_users + n_items
        emb = ad.Tensor.param(ad.glorot_uniform(rng, n, d), "embedding")
        topo = [ad.Tensor.param(ad.glorot_uniform(rng, d, 2 * d), f"topo{l}") for l in range(topo_layers)]
        attn = AttentionParams.init(d, heads, rng)
        mlp_params = []
        if mlp:
            mlp_params = [
                ad.Tensor.param(ad.glorot_uniform(rng, d, d), "mlp_w1"),
                ad.Tensor.param(np.zeros((1, d)), "mlp_b1"),
                ad.Tensor.param(ad.glorot_uniform(rng, d, 1), "mlp_w2"),
            ]
        return cls(n_users, n_items, emb, topo, attn, mlp_params)

    @property
    def dim(self) -> int:
        return self.embedding.cols

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def tensors(self) -> list[ad.Tensor]:
        return [self.embedding, *self.topo, *self.attn.tensors(), *self.mlp]

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {t.name: t.value for t in self.tensors()}

    def copy(self) -> "ModelParams":
        def c(t):
            return ad.Tensor.param(t.value, t.name)

        attn = AttentionParams(c(self.attn.w_q), c(self.attn.w_k), c(self.attn.w_v), self.attn.heads)
        return ModelParams(self.n_users, self.n_items, c(self.embedding), [c(t) for t in self.topo],
                           attn, [c(t) for t in self.mlp])

    def node_pairs(self, edges) -> np.ndarray:
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        return np.stack([edges[:, 0], edges[:, 1] + self.n_users], axis=1)

    def adjacency(self, edges) -> ad.SparseMatrix:
        return normalized_adjacency(self.n_users, self.n_items, edges)


def lgcn(base: ad.Tensor, adj: ad.SparseMatrix, layers: int) -> ad.Tensor:
    """``layers`` rounds of ``z <- A z``; the last layer is returned, not a layer mean."""
    if layers < 0:
        raise ContractError("layer count must be non-negative")
    z = base
    for _ in range(layers):
        z = ad.spmm(adj, z)
    return z


def topo_embed(params: ModelParams, h: ad.Tensor, ctx: topology.TopologyContext | None,
               use_topology: bool = True) -> ad.Tensor:
    if not use_topology or ctx is None or not params.topo:
        return h
    return topology.encode(h, ctx, params.topo)


def transformer_encode(params: ModelParams, base: ad.Tensor, edges, ctx, smoothing_layers: int,
                       use_topology: bool = True, adj: ad.SparseMatrix | None = None) -> ad.Tensor:
    """LightGCN smoothing over ``edges``, then topology injection, then edge attention."""
    edges = np.asarray(edges).reshape(-1, 2)
    if len(edges) == 0:
        raise ContractError("transformer_encode needs a non-empty edge set")
    if adj is None:
        adj = params.adjacency(edges)
    smooth = lgcn(base, adj, smoothing_layers)
    return attend(topo_embed(params, smooth, ctx, use_topology), params.node_pairs(edges), params.attn).z


def rationale_branch(params: ModelParams, ctx, train_edges, rationale_edges, layers: int,
                     use_topology: bool = True, rationale_adj=None) -> ad.Tensor:
    """Embeddings ``Z^L`` used by the pairwise ranking loss.

    Attention runs over the full training graph; propagation runs over the
    rationale subgraph only.
    """
    if len(rationale_edges) == 0:
        raise ContractError("rationale edge set is empty")
    hbar = topo_embed(params, params.embedding, ctx, use_topology)
    z0 = attend(hbar, params.node_pairs(train_edges), params.attn).z
    if rationale_adj is None:
        rationale_adj = params.adjacency(rationale_edges)
    return lgcn(z0, rationale_adj, layers)


def pair_scores(z: ad.Tensor, n_users: int, users, items) -> ad.Tensor:
    """Dot products of user and item rows, shaped ``(len(users), 1)``."""
    zu = ad.gather_rows(z, np.asarray(users, dtype=np.int64))
    zi = ad.gather_rows(z, np.asarray(items, dtype=np.int64) + n_users)
    return ad.sum(zu * zi, axis=1)


def autoencoder_branch(params: ModelParams, ctx, kept_edges, layers: int, use_topology: bool = True,
                       kept_adj=None) -> ad.Tensor:
    """Final embedding table ``S`` computed from the masked graph."""
    if len(kept_edges) == 0:
        raise ContractError("masked graph has no edges")
    return transformer_encode(params, params.embedding, kept_edges, ctx, layers, use_topology, kept_adj)


def predict(s: np.ndarray, n_users: int, user: int, exclude=None) -> np.ndarray:
    """Scores of every item for ``user``; items in ``exclude`` get ``-inf``."""
    s = s.value if isinstance(s, ad.Tensor) else np.asarray(s)
    if not 0 <= user < n_users:
        raise KeyError(f"unknown user index {user}")
    scores = s[n_users:] @ s[user]
    if exclude is not None and len(exclude):
        scores[np.asarray(exclude, dtype=np.int64)] = -np.inf
    return scores


def mlp_node_importance(params: ModelParams, h: ad.Tensor) -> ad.Tensor:
    """One-hidden-layer MLP giving each node an importance in (0, 1)."""
    w1, b1, w2 = params.mlp
    return ad.sigmoid(ad.tanh(h @ w1 + b1) @ w2)


# checkpoints

def save_checkpoint(path, params: ModelParams, meta: dict | None = None,
                    extra_arrays: dict[str, np.ndarray] | None = None) -> None:
    """Write a zip archive of ``.npy`` arrays plus a JSON header.

    Arrays are stored losslessly so a reload reproduces forward outputs bit
    for bit.
    """
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "n_users": params.n_users,
        "n_items": params.n_items,
        "heads": params.attn.heads,
        "topo_layers": len(params.topo),
        "has_mlp": bool(params.mlp),
        "shapes": {t.name: list(t.shape) for t in params.tensors()},
        "meta": meta or {},
    }
    arrays = {f"param/{k}": v for k, v in params.named_arrays().items()}
    for k, v in (extra_arrays or {}).items():
        arrays[f"extra/{k}"] = np.asarray(v)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("header.json", json.dumps(header, indent=2, sort_keys=True))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, arrays[name], allow_pickle=False)
            zf.writestr(name + ".npy", buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path) -> tuple[ModelParams, dict, dict[str, np.ndarray]]:
    with zipfile.ZipFile(Path(path)) as zf:
        header = json.loads(zf.read("header.json"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ContractError(f"{path} is not a checkpoint archive")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {header.get('version')}")
        arrays = {}
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.load(io.BytesIO(zf.read(name)), allow_pickle=False)
    p = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    for name, shape in header["shapes"].items():
        if list(p[name].shape) != shape:
            raise ShapeError(f"checkpoint tensor {name} has shape {p[name].shape}, header says {shape}")
    attn = AttentionParams(ad.Tensor.param(p["w_q"], "w_q"), ad.Tensor.param(p["w_k"], "w_k"),
                           ad.Tensor.param(p["w_v"], "w_v"), header["heads"])
    topo = [ad.Tensor.param(p[f"topo{l}"], f"topo{l}") for l in range(header["topo_layers"])]
    mlp = [ad.Tensor.param(p[n], n) for n in ("mlp_w1", "mlp_b1", "mlp_w2")] if header["has_mlp"] else []
    params = ModelParams(header["n_users"], header["n_items"], ad.Tensor.param(p["embedding"], "embedding"),
                         topo, attn, mlp)
    extra = {k[len("extra/"):]: v for k, v in arrays.items() if k.startswith("extra/")}
    return params, header["meta"], extra
