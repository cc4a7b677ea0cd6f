"""Robustness curves and ablation comparisons built on the trainer."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig, substream
from .estimator import RationaleRecommender
from .evaluation import EvalReport
from .exceptions import ConfigError
from .graph import DatasetSplit, perturb_noise, perturb_sparsify

CURVE_HEADER = ("level", "recall@20", "ndcg@20", "relative_degradation")


def train_and_evaluate(config: TrainConfig, data: DatasetSplit, ks=(20,), progress=None
                       ) -> tuple[EvalReport, RationaleRecommender]:
    est = RationaleRecommender.from_config(config).fit(data, progress=progress)
    return est.evaluate(data.test, ks), est


def perturb(data: DatasetSplit, kind: str, level: float, seed) -> DatasetSplit:
    if kind == "noise":
        return perturb_noise(data, level, seed)
    if kind in ("sparsity", "sparsify", "drop"):
        return perturb_sparsify(data, level, seed)
    raise ConfigError(f"unknown perturbation {kind!r}; use noise or sparsity")


@dataclass
class CurvePoint:
    level: float
    recall: float
    ndcg: float
    relative_degradation: float
    per_seed_recall: tuple[float, ...] = ()


def robustness_sweep(config: TrainConfig, data: DatasetSplit, kind: str, levels, seeds=None,
                     k: int = 20, progress=None) -> list[CurvePoint]:
    """Train once per (level, seed) on perturbed training data and evaluate on clean test data.

    Metrics are averaged over seeds. Degradation is relative to the
    unperturbed level: ``(base - recall) / base``. The base run is trained
    even when 0 is not among ``levels``.
    """
    seeds = [config.seed] if seeds is None else list(seeds)
    levels = [float(x) for x in levels]
    results: dict[float, list[EvalReport]] = {}
    for level in sorted(set(levels) | {0.0}):
        reports = []
        for s in seeds:
            cfg = config.replace(seed=s)
            perturbed = perturb(data, kind, level, substream(s, "perturb", int(round(level * 1e6))))
            report, _ = train_and_evaluate(cfg, perturbed, ks=(k,))
            reports.append(report)
            if progress is not None:
                progress(level, s, report)
        results[level] = reports
    base = float(np.mean([r.recall[k] for r in results[0.0]]))
    points = []
    for level in levels:
        recs = [r.recall[k] for r in results[level]]
        rec = float(np.mean(recs))
        ndcg = float(np.mean([r.ndcg[k] for r in results[level]]))
        deg = (base - rec) / base if base > 0 else 0.0
        points.append(CurvePoint(level, rec, ndcg, deg, tuple(recs)))
    return points


def write_curve(points, path) -> None:
    with Path(path).open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(CURVE_HEADER)
        for p in points:
            out.writerow([p.level, repr(p.recall), repr(p.ndcg), repr(p.relative_degradation)])


def ablation_table(config: TrainConfig, data: DatasetSplit, variants, seeds, k: int = 20) -> dict:
    """Mean and per-seed Recall@k for each ablation variant."""
    table = {}
    for v in variants:
        recs = []
        for s in seeds:
            report, _ = train_and_evaluate(config.replace(ablation=v, seed=s), data, ks=(k,))
            recs.append(report.recall[k])
        table[v] = {"mean": float(np.mean(recs)), "per_seed": recs}
    return table
