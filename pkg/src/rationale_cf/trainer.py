"""Epoch loop: score edges, draw subgraphs, run both branches, take Adam steps."""

from __future__ import annotations

import csv
import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .attention import RationaleScores, attend, edge_probabilities
from .config import TrainConfig, substream
from .encoders import (
    ModelParams,
    autoencoder_branch,
    load_checkpoint,
    mlp_node_importance,
    rationale_branch,
    save_checkpoint,
    topo_embed,
)
from .evaluation import evaluate_scores
from .exceptions import ContractError, NonFiniteError
from .graph import DatasetSplit
from .objectives import (
    LOSS_FIELDS,
    LossBreakdown,
    combine,
    loss_cir,
    loss_mae,
    loss_rd,
    loss_rec,
    loss_reg,
    resolve_rec_mode,
)
from .sampling import draw_complement, draw_masked, draw_rationale
from .topology import TopologyContext

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch",) + LOSS_FIELDS


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params) -> "AdamState":
        return cls([np.zeros_like(p.value) for p in params], [np.zeros_like(p.value) for p in params])


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update applied to ``params`` in order; no weight decay."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("params, grads and optimizer state differ in length")
    for g in grads:
        if not np.isfinite(g).all():
            raise NonFiniteError("non-finite gradient")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.value.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {p.value.shape}")
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        m_hat = state.m[i] / (1 - b1 ** t)
        v_hat = state.v[i] / (1 - b2 ** t)
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        grads = [g * factor for g in grads]
    return grads, norm


@dataclass
class EpochResult:
    epoch: int
    losses: LossBreakdown
    seconds: float
    steps: int


@dataclass
class FitResult:
    params: ModelParams
    history: list[dict]
    best_epoch: int
    best_score: float | None
    epochs_run: int
    stopped_early: bool = False
    counters: dict = field(default_factory=dict)


class Trainer:
    """Holds model, optimizer and data for one training run.

    All randomness is drawn from named sub-streams of ``config.seed``, with
    the per-epoch streams keyed by the epoch number, so a run resumed from a
    checkpoint replays the uninterrupted run exactly.
    """

    def __init__(self, config: TrainConfig, data: DatasetSplit, params: ModelParams | None = None):
        self.config = config
        self.data = data
        train = data.train
        if train.n_edges == 0:
            raise ContractError("training graph has no edges")
        self.n_users, self.n_items = train.n_users, train.n_items
        self.train_edges = train.edges
        self.train_keys = np.sort(train.edge_keys())
        self.ctx = self._build_context(0)
        self.rec_mode = resolve_rec_mode(config.rec_mode, self.n_items)
        self.params = params or ModelParams.init(
            self.n_users, self.n_items, config.dim, config.heads, config.topo_layers,
            substream(config.seed, "init"), mlp=config.ablation == "mlp_mask",
        )
        self.adam = AdamState.init(self.params.tensors())
        self.epoch = 0
        self.history: list[dict] = []
        self.best_score: float | None = None
        self.best_epoch = 0
        self.best_params = self.params.copy()
        self.bad_epochs = 0
        self.counters: Counter = Counter()
        self._train_adj = self.params.adjacency(self.train_edges)

    def _build_context(self, epoch: int) -> TopologyContext | None:
        cfg = self.config
        if not cfg.use_topology or cfg.topo_layers == 0:
            return None
        n_nodes = self.data.train.n_nodes
        key = ("anchors", epoch) if cfg.resample_anchors else ("anchors",)
        return TopologyContext.build(self.data.train, min(cfg.anchor_count, n_nodes), cfg.cutoff,
                                     substream(cfg.seed, *key))

    # pieces of one epoch

    def score_edges(self, epoch: int = -1) -> RationaleScores:
        hbar = topo_embed(self.params, self.params.embedding, self.ctx, self.config.use_topology)
        out = attend(hbar, self.params.node_pairs(self.train_edges), self.params.attn)
        return edge_probabilities(out.alpha, self.train_edges, epoch)

    def mask_weights(self, scores: RationaleScores) -> np.ndarray:
        cfg = self.config
        if cfg.ablation == "random_mask":
            return np.full(len(scores.edges), 1.0 / len(scores.edges))
        if cfg.ablation == "mlp_mask":
            hbar = topo_embed(self.params, self.params.embedding, self.ctx, cfg.use_topology)
            imp = mlp_node_importance(self.params, hbar).value[:, 0]
            edge_score = imp[scores.edges[:, 0]] * imp[scores.edges[:, 1] + self.n_users]
            inv = 1.0 / (edge_score + cfg.eps)
            return inv / inv.sum()
        inv = 1.0 / (scores.alpha_bar + cfg.eps)
        return inv / inv.sum()

    def sample_triplets(self, order: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One uniform unobserved negative per training edge, in ``order``."""
        pos = self.train_edges[order]
        neg = rng.integers(0, self.n_items, size=len(pos))
        for _ in range(100):
            bad = np.isin(pos[:, 0] * self.n_items + neg, self.train_keys)
            if not bad.any():
                break
            neg[bad] = rng.integers(0, self.n_items, size=int(bad.sum()))
        else:
            bad = np.isin(pos[:, 0] * self.n_items + neg, self.train_keys)
            pos, neg = pos[~bad], neg[~bad]
        self.counters["triplets_sampled"] += len(pos)
        return np.column_stack([pos, neg])

    def train_epoch(self) -> EpochResult:
        cfg = self.config
        e = self.epoch
        start = time.perf_counter()
        if cfg.resample_anchors and e > 0:
            self.ctx = self._build_context(e)
        sampler = substream(cfg.seed, "sampler", e)
        neg_rng = substream(cfg.seed, "negatives", e)
        scores = self.score_edges(e)
        rationale = draw_rationale(scores, cfg.rho_r, sampler)
        weights = self.mask_weights(scores)
        masked = draw_masked(scores, cfg.rho_m, cfg.eps, sampler, weights=weights)
        complement = draw_complement(scores, cfg.rho_c, cfg.eps, sampler, masked_rate=cfg.rho_m,
                                     weights=weights)
        p = self.params
        adj_r = p.adjacency(rationale.edges)
        adj_m = p.adjacency(masked.edges)
        adj_c = p.adjacency(complement.edges)
        n_train = len(self.train_edges)
        order = neg_rng.permutation(n_train)
        lam1 = cfg.effective_lambda1
        triplets = self.sample_triplets(order, neg_rng) if lam1 > 0 else None
        n_batches = max(1, math.ceil(n_train / cfg.batch_size))
        held = self.train_edges[masked.held_out]
        held_chunks = np.array_split(held, n_batches)
        tensors = p.tensors()
        total = LossBreakdown.zero()
        for b in range(n_batches):
            batch = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            with ad.Tape() as tape:
                s = autoencoder_branch(p, self.ctx, masked.edges, cfg.ae_layers, cfg.use_topology, adj_m)
                l_rec = loss_rec(s, self.n_users, self.n_items, self.train_edges[batch], self.rec_mode,
                                 cfg.rec_negatives, substream(cfg.seed, "rec", e, b))
                l_mae = loss_mae(s, self.n_users, held_chunks[b]) if len(held_chunks[b]) else None
                l_rd = None
                if lam1 > 0:
                    trip = triplets[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                    z = rationale_branch(p, self.ctx, self.train_edges, rationale.edges, cfg.gcn_layers,
                                         cfg.use_topology, adj_r)
                    l_rd = loss_rd(z, self.n_users, trip)
                    self.counters["rd_batches"] += 1
                l_cir = None
                if cfg.lambda2 > 0:
                    l_cir = ad.scale(loss_cir(p.embedding, adj_r, adj_c, cfg.cir_layers, cfg.tau), 1.0 / n_batches)
                l_reg = ad.scale(loss_reg(tensors), 1.0 / n_batches) if cfg.lambda3 > 0 else None
                loss, parts = combine(l_rec, l_mae, l_rd, l_cir, l_reg, lam1, cfg.lambda2, cfg.lambda3)
            grads = tape.backward(loss, tensors)
            glist = [grads[t] for t in tensors]
            if not all(np.isfinite(g).all() for g in glist):
                raise NonFiniteError(f"non-finite gradient in epoch {e}, batch {b}")
            glist, _ = clip_global_norm(glist, cfg.clip_norm)
            adam_step(tensors, glist, self.adam, cfg.lr)
            total = total + parts
        self.epoch += 1
        return EpochResult(e, total, time.perf_counter() - start, n_batches)

    # evaluation-time embeddings

    def embeddings(self, params: ModelParams | None = None) -> np.ndarray:
        """Final table ``S`` with the full training graph standing in for the masked one."""
        p = params or self.params
        s = autoencoder_branch(p, self.ctx, self.train_edges, self.config.ae_layers,
                               self.config.use_topology, self._train_adj)
        return s.value

    def score_matrix(self, params: ModelParams | None = None) -> np.ndarray:
        s = self.embeddings(params)
        return s[:self.n_users] @ s[self.n_users:].T

    def validate(self) -> float | None:
        val = self.data.validation
        if val.n_edges == 0:
            return None
        k = self.config.eval_k
        return evaluate_scores(self.score_matrix(), self.data.train, val, ks=(k,)).recall[k]

    # full run

    def fit(self, metrics_path=None, checkpoint_path=None, progress=None) -> FitResult:
        cfg = self.config
        stopped = False
        if metrics_path is not None and self.epoch == 0:
            with Path(metrics_path).open("w", newline="") as fh:
                csv.writer(fh).writerow(METRICS_HEADER)
        if checkpoint_path is not None:
            self.save(checkpoint_path)
        while self.epoch < cfg.max_epochs:
            # on a numeric failure the checkpoint still holds the last completed epoch
            res = self.train_epoch()
            score = self.validate()
            row = {"epoch": res.epoch, **dict(zip(LOSS_FIELDS, res.losses.as_row())), "val_recall": score}
            self.history.append(row)
            if metrics_path is not None:
                with Path(metrics_path).open("a", newline="") as fh:
                    csv.writer(fh).writerow([res.epoch] + [repr(v) for v in res.losses.as_row()])
            if progress is not None:
                progress(res, score)
            if score is not None:
                if self.best_score is None or score > self.best_score:
                    self.best_score, self.best_epoch = score, res.epoch
                    self.best_params = self.params.copy()
                    self.bad_epochs = 0
                else:
                    self.bad_epochs += 1
            else:
                self.best_params = self.params.copy()
                self.best_epoch = res.epoch
            if checkpoint_path is not None:
                self.save(checkpoint_path)
            if score is not None and self.bad_epochs >= cfg.patience:
                stopped = True
                break
        return FitResult(self.best_params, list(self.history), self.best_epoch, self.best_score,
                         self.epoch, stopped, dict(self.counters))

    # persistence

    def save(self, path) -> None:
        meta = {
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "adam_step": self.adam.step,
            "best_score": self.best_score,
            "best_epoch": self.best_epoch,
            "bad_epochs": self.bad_epochs,
            "history": self.history,
            "counters": dict(self.counters),
        }
        extra = {}
        for i, (m, v) in enumerate(zip(self.adam.m, self.adam.v)):
            extra[f"adam_m/{i}"] = m
            extra[f"adam_v/{i}"] = v
        for name, arr in self.best_params.named_arrays().items():
            extra[f"best/{name}"] = arr
        save_checkpoint(path, self.params, meta, extra)

    @classmethod
    def load(cls, path, data: DatasetSplit) -> "Trainer":
        params, meta, extra = load_checkpoint(path)
        cfg = TrainConfig.from_mapping(meta["config"])
        trainer = cls(cfg, data, params)
        n = len(params.tensors())
        trainer.adam = AdamState([extra[f"adam_m/{i}"] for i in range(n)],
                                 [extra[f"adam_v/{i}"] for i in range(n)], meta["adam_step"])
        trainer.epoch = meta["epoch"]
        trainer.best_score = meta["best_score"]
        trainer.best_epoch = meta["best_epoch"]
        trainer.bad_epochs = meta["bad_epochs"]
        trainer.history = meta["history"]
        trainer.counters = Counter(meta.get("counters", {}))
        best = params.copy()
        for t in best.tensors():
            t.value = extra[f"best/{t.name}"].copy()
        trainer.best_params = best
        return trainer
