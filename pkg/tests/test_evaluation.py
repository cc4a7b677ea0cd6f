import json
import math

import numpy as np
import pytest

from rationale_cf.evaluation import (
    evaluate_scores,
    ndcg_at_k,
    popularity_scores,
    rank_items,
    recall_at_k,
)
from rationale_cf.graph import InteractionGraph


def brute_force(scores, train, test, k):
    """Pure-python ranking: sort by (-score, item) after dropping training items."""
    seen = {}
    for u, i in train.edges:
        seen.setdefault(int(u), set()).add(int(i))
    rel = {}
    for u, i in test.edges:
        rel.setdefault(int(u), set()).add(int(i))
    recalls, ndcgs, tops = {}, {}, {}
    for u, items in rel.items():
        cand = [i for i in range(scores.shape[1]) if i not in seen.get(u, set())]
        ranked = sorted(cand, key=lambda i: (-scores[u, i], i))[:k]
        hits = [i in items for i in ranked]
        recalls[u] = sum(hits) / len(items)
        dcg = 0.0
        for r, h in enumerate(hits):
            if h:
                dcg += 1 / math.log2(r + 2)
        idcg = 0.0
        for r in range(min(k, len(items))):
            idcg += 1 / math.log2(r + 2)
        ndcgs[u] = dcg / idcg
        tops[u] = ranked
    return recalls, ndcgs, tops


def random_split(seed, n_users=200, n_items=60):
    rng = np.random.default_rng(seed)
    keys = rng.choice(n_users * n_items, size=2400, replace=False)
    edges = np.stack([keys // n_items, keys % n_items], axis=1)
    train = InteractionGraph(n_users, n_items, edges[:1800])
    test = InteractionGraph(n_users, n_items, edges[1800:])
    return train, test, rng


@pytest.mark.parametrize("seed", range(3))
def test_metrics_match_brute_force(seed):
    train, test, rng = random_split(seed)
    # rounded scores produce plenty of ties
    scores = np.round(rng.normal(size=(200, 60)), 1)
    for k in (5, 20):
        report = evaluate_scores(scores, train, test, ks=(k,), keep_per_user=True)
        recalls, ndcgs, tops = brute_force(scores, train, test, k)
        assert set(report.per_user) == set(recalls)
        for u in recalls:
            r, n = report.per_user[u][k]
            assert r == recalls[u]
            assert abs(n - ndcgs[u]) <= 1e-12
        assert abs(report.recall[k] - np.mean(list(recalls.values()))) <= 1e-12


def test_recall_examples():
    assert recall_at_k([3, 1, 2], [1, 3], 2) == 1.0
    assert recall_at_k([3, 1, 2], [7, 8], 3) == 0.0
    ranked = list(range(20))
    assert recall_at_k(ranked, [0, 5, 19, 30, 31, 32, 33], 20) == 3 / 7
    assert recall_at_k(ranked, [], 20) is None


def test_ndcg_examples():
    assert ndcg_at_k([4, 1], [4], 2) == 1.0
    assert abs(ndcg_at_k([1, 4], [4], 2) - 1 / math.log2(3)) < 1e-12
    assert abs(ndcg_at_k([1, 4], [4], 2) - 0.6309) < 1e-4
    assert ndcg_at_k([1, 2], [9], 2) == 0.0


def test_perfect_scores_give_perfect_metrics():
    train, test, _ = random_split(7)
    scores = np.zeros((200, 60))
    scores[test.edges[:, 0], test.edges[:, 1]] = np.inf
    report = evaluate_scores(scores, train, test, ks=(20,))
    assert report.recall[20] == 1.0 and report.ndcg[20] == 1.0


def test_ties_break_to_lower_item_index():
    assert rank_items(np.array([[1.0, 2.0, 2.0, 1.0]]), 3).tolist() == [[1, 2, 0]]
    train = InteractionGraph(1, 4, np.zeros((0, 2)))
    test = InteractionGraph(1, 4, [[0, 3]])
    flat = np.zeros((1, 4))
    assert evaluate_scores(flat, train, test, ks=(3,)).recall[3] == 0.0
    a = evaluate_scores(flat, train, test, ks=(3, 4)).to_json()
    assert a == evaluate_scores(flat, train, test, ks=(3, 4)).to_json()


def test_training_items_never_ranked():
    train, test, rng = random_split(3)
    scores = rng.normal(size=(200, 60))
    scores[train.edges[:, 0], train.edges[:, 1]] = 1e9  # would dominate if not masked
    masked = scores.copy()
    masked[train.edges[:, 0], train.edges[:, 1]] = -np.inf
    top = rank_items(masked, 20)
    seen = train.user_items()
    for u in range(200):
        assert not set(top[u]) & set(seen[u].tolist())
    report = evaluate_scores(scores, train, test, ks=(20,))
    assert report.recall[20] == evaluate_scores(masked, train, test, ks=(20,)).recall[20]


def test_users_without_test_items_are_skipped():
    train = InteractionGraph(3, 3, [[0, 0], [1, 1], [2, 2]])
    test = InteractionGraph(3, 3, [[0, 1]])
    report = evaluate_scores(np.zeros((3, 3)), train, test, ks=(1,))
    assert report.n_users == 1 and report.recall[1] == 1.0


def test_report_json(tmp_path):
    train, test, rng = random_split(1)
    report = evaluate_scores(rng.normal(size=(200, 60)), train, test)
    report.write(tmp_path / "r.json")
    body = json.loads((tmp_path / "r.json").read_text())
    assert body["ks"] == [10, 20, 40] and set(body["recall"]) == {"10", "20", "40"}


def test_popularity_scores():
    g = InteractionGraph(3, 3, [[0, 1], [1, 1], [2, 0]])
    pop = popularity_scores(g)
    assert pop.shape == (3, 3) and pop[0].tolist() == [1.0, 2.0, 0.0]


def test_cutoff_larger_than_catalog():
    train = InteractionGraph(2, 3, np.array([[0, 0]]))
    test = InteractionGraph(2, 3, np.array([[0, 2], [1, 1]]))
    scores = np.array([[0.0, 1.0, 0.5], [0.2, 0.1, 0.3]])
    report = evaluate_scores(scores, train, test, ks=(20,))
    assert report.recall[20] == 1.0
    assert np.isclose(report.ndcg[20], (1 / np.log2(3) + 1 / np.log2(4)) / 2)


def test_untrained_model_on_structureless_data_ranks_like_chance():
    # with no planted structure, test items are exchangeable with every other unseen item
    from rationale_cf.config import TrainConfig
    from rationale_cf.experiments import train_and_evaluate
    from rationale_cf.graph import split

    n_users, n_items, k = 60, 100, 20
    cfg = TrainConfig(dim=8, heads=2, anchor_count=8, max_epochs=0)
    recalls, expected = [], []
    for seed in range(12):
        rng = np.random.default_rng(seed)
        keys = rng.choice(n_users * n_items, size=1200, replace=False)
        data = split(InteractionGraph(n_users, n_items, np.stack([keys // n_items, keys % n_items], 1)), seed=seed)
        report, _ = train_and_evaluate(cfg.replace(seed=seed), data, ks=(k,))
        recalls.append(report.recall[k])
        seen = np.bincount(data.train.edges[:, 0], minlength=n_users)
        users = np.unique(data.test.edges[:, 0])
        expected.append(np.mean(k / (n_items - seen[users])))
    recalls = np.array(recalls)
    sem = recalls.std(ddof=1) / np.sqrt(len(recalls))
    assert abs(recalls.mean() - np.mean(expected)) <= 3 * sem
    assert abs(np.mean(expected) - k / n_items) < 0.05
