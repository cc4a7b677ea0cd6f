"""scikit-learn style wrapper around :class:`~rationale_cf.trainer.Trainer`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .attention import RationaleScores
from .config import TrainConfig
from .exceptions import ContractError
from .evaluation import DEFAULT_KS, EvalReport, evaluate_scores, rank_items
from .graph import DatasetSplit, InteractionGraph
from .trainer import Trainer
from .validation import check_interactions, check_users


class RationaleRecommender(BaseEstimator):
    """Graph recommender trained with rationale-aware masked autoencoding.

    ``fit`` takes (user, item) training pairs, an :class:`InteractionGraph`,
    or a whole :class:`DatasetSplit` (whose validation part then drives early
    stopping). Scores are dot products of the final node embeddings computed
    over the full training graph.
    """

    def __init__(self, dim=32, heads=4, anchor_count=32, cutoff=4, topo_layers=1, gcn_layers=2,
                 ae_layers=2, cir_layers=2, rho_r=0.7, rho_m=0.9, rho_c=0.1, eps=1e-8, tau=0.1,
                 lambda1=1.0, lambda2=1e-2, lambda3=1e-5, lr=1e-3, batch_size=4096, max_epochs=100,
                 patience=10, seed=0, ablation="none", rec_mode="auto", rec_negatives=256,
                 clip_norm=5.0, eval_k=20, resample_anchors=False):
        self.dim = dim
        self.heads = heads
        self.anchor_count = anchor_count
        self.cutoff = cutoff
        self.topo_layers = topo_layers
        self.gcn_layers = gcn_layers
        self.ae_layers = ae_layers
        self.cir_layers = cir_layers
        self.rho_r = rho_r
        self.rho_m = rho_m
        self.rho_c = rho_c
        self.eps = eps
        self.tau = tau
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.ablation = ablation
        self.rec_mode = rec_mode
        self.rec_negatives = rec_negatives
        self.clip_norm = clip_norm
        self.eval_k = eval_k
        self.resample_anchors = resample_anchors

    def get_config(self) -> TrainConfig:
        return TrainConfig(**self.get_params())

    @classmethod
    def from_config(cls, config: TrainConfig) -> "RationaleRecommender":
        return cls(**config.to_dict())

    def fit(self, X, y=None, validation=None, metrics_path=None, checkpoint_path=None, progress=None):
        if isinstance(X, DatasetSplit):
            data = X
        else:
            train = check_interactions(X)
            val = (check_interactions(validation, train.n_users, train.n_items)
                   if validation is not None else train.with_edges(np.zeros((0, 2))))
            data = DatasetSplit(train, val, train.with_edges(np.zeros((0, 2))))
        trainer = Trainer(self.get_config(), data)
        result = trainer.fit(metrics_path=metrics_path, checkpoint_path=checkpoint_path, progress=progress)
        self._set_fitted(trainer, result.params)
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_epochs_ = result.epochs_run
        return self

    def _set_fitted(self, trainer: Trainer, params) -> None:
        self.trainer_ = trainer
        self.params_ = params
        self.train_graph_ = trainer.data.train
        self.n_users_ = trainer.n_users
        self.n_items_ = trainer.n_items
        self.embeddings_ = trainer.embeddings(params)

    @classmethod
    def from_trainer(cls, trainer: Trainer, use_best: bool = True) -> "RationaleRecommender":
        est = cls.from_config(trainer.config)
        est._set_fitted(trainer, trainer.best_params if use_best else trainer.params)
        est.history_ = list(trainer.history)
        est.best_epoch_ = trainer.best_epoch
        est.n_epochs_ = trainer.epoch
        return est

    def transform(self, users=None) -> np.ndarray:
        """Final user embeddings (all users when ``users`` is None)."""
        check_is_fitted(self, "embeddings_")
        if users is None:
            return self.embeddings_[: self.n_users_].copy()
        return self.embeddings_[check_users(users, self.n_users_)].copy()

    @property
    def item_embeddings_(self) -> np.ndarray:
        check_is_fitted(self, "embeddings_")
        return self.embeddings_[self.n_users_:]

    def decision_function(self, users=None) -> np.ndarray:
        """``(len(users), n_items)`` matrix of raw preference scores."""
        return self.transform(users) @ self.item_embeddings_.T

    def predict(self, X) -> np.ndarray:
        """Score of each (user, item) pair in ``X``."""
        check_is_fitted(self, "embeddings_")
        pairs = X.edges if isinstance(X, InteractionGraph) else np.asarray(X, dtype=np.int64)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise ContractError(f"expected an (n, 2) array of (user, item) pairs, got shape {pairs.shape}")
        check_users(pairs[:, 0], self.n_users_)
        if len(pairs) and (pairs[:, 1].min() < 0 or pairs[:, 1].max() >= self.n_items_):
            raise KeyError(f"item index out of range [0, {self.n_items_})")
        s = self.embeddings_
        return np.einsum("ij,ij->i", s[pairs[:, 0]], s[pairs[:, 1] + self.n_users_])

    def recommend(self, users, k: int = 20, exclude_seen: bool = True) -> np.ndarray:
        """Top-``k`` item indices per user; ties go to the lower item index."""
        users = check_users(users, self.n_users_)
        scores = self.decision_function(users)
        if exclude_seen:
            seen = self.train_graph_.user_items()
            for row, u in enumerate(users):
                scores[row, seen[u]] = -np.inf
        return rank_items(scores, k)

    def evaluate(self, test, ks=DEFAULT_KS) -> EvalReport:
        check_is_fitted(self, "embeddings_")
        test = check_interactions(test, self.n_users_, self.n_items_)
        return evaluate_scores(self.decision_function(), self.train_graph_, test, ks)

    def score(self, X, y=None) -> float:
        """Recall@``eval_k`` on the held-out pairs ``X``."""
        return self.evaluate(X, ks=(self.eval_k,)).recall[self.eval_k]

    def rationale_scores(self) -> RationaleScores:
        check_is_fitted(self, "params_")
        saved = self.trainer_.params
        self.trainer_.params = self.params_
        try:
            return self.trainer_.score_edges(self.n_epochs_)
        finally:
            self.trainer_.params = saved
