"""Rationale-aware graph collaborative filtering with masked graph autoencoding."""

from .attention import RationaleScores, export_rationales
from .config import ABLATIONS, TrainConfig
from .estimator import RationaleRecommender
from .evaluation import EvalReport, evaluate_scores, ndcg_at_k, popularity_scores, recall_at_k
from .exceptions import (
    ConfigError,
    ContractError,
    DegenerateRowError,
    EmptyDatasetError,
    NonFiniteError,
    ParseError,
    RationaleCFError,
    SaturationError,
    ShapeError,
)
from .experiments import ablation_table, robustness_sweep
from .graph import DatasetSplit, InteractionGraph, ingest, perturb_noise, perturb_sparsify, split
from .synthetic import block_dataset
from .trainer import Trainer

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS", "ConfigError", "ContractError", "DatasetSplit", "DegenerateRowError", "EmptyDatasetError",
    "EvalReport", "InteractionGraph", "NonFiniteError", "ParseError", "RationaleCFError",
    "RationaleRecommender", "RationaleScores", "SaturationError", "ShapeError", "TrainConfig", "Trainer",
    "ablation_table", "block_dataset", "evaluate_scores", "export_rationales", "ingest", "ndcg_at_k",
    "perturb_noise", "perturb_sparsify", "popularity_scores", "recall_at_k", "robustness_sweep", "split",
]
