import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpcdr import evaluation
from dpcdr.evaluation import metrics_from_ranks, rank_position


def test_rank_position_examples():
    s = np.zeros(100)
    s[4] = 1.0
    assert rank_position(s, 4) == 1
    assert rank_position(np.ones(100), 0) == 1
    s = np.linspace(1, 0, 100)
    assert rank_position(s, 6) == 7
    # ties resolved by item id, not by column position
    ids = np.arange(100)[::-1]
    assert rank_position(np.ones(100), 0, ids) == 100


def test_metric_unit_values():
    r1 = metrics_from_ranks([1])
    assert r1["HR@5"] == r1["NDCG@5"] == r1["MRR@5"] == 1.0
    r3 = metrics_from_ranks([3])
    assert abs(r3["NDCG@5"] - 0.5) < 1e-12 and abs(r3["MRR@5"] - 1 / 3) < 1e-12
    r7 = metrics_from_ranks([7])
    assert r7["HR@5"] == 0 and r7["HR@10"] == 1
    assert abs(r7["NDCG@10"] - 1 / 3) < 1e-12
    assert r7.n_users == 1 and set(r7.flat()) == {f"{m}@{k}" for m in ("HR", "NDCG", "MRR") for k in (5, 10)}


def test_metric_errors():
    with pytest.raises(ValueError):
        metrics_from_ranks([])
    with pytest.raises(ValueError):
        metrics_from_ranks([0, 1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 100), min_size=1, max_size=50))
def test_metric_invariants(ranks):
    rep = metrics_from_ranks(ranks, (1, 5, 10, 20))
    for k in (1, 5, 10, 20):
        hr, ndcg, mrr = rep[f"HR@{k}"], rep[f"NDCG@{k}"], rep[f"MRR@{k}"]
        assert 0 <= ndcg <= hr <= 1 and 0 <= mrr <= hr
    for a, b in ((1, 5), (5, 10), (10, 20)):
        for m in ("HR", "NDCG", "MRR"):
            assert rep[f"{m}@{a}"] <= rep[f"{m}@{b}"]


class _Split:
    def __init__(self, n_users, rng):
        self.items = np.stack([rng.permutation(500)[:100] for _ in range(n_users)])
        self.n_users = n_users

    def candidates(self, which):
        return self.items, np.zeros(self.n_users, dtype=np.int64)


def test_random_scorer_hr10_near_chance():
    rng = np.random.default_rng(0)
    split = _Split(3000, rng)
    rep = evaluation.evaluate_scorer(lambda u, i: rng.random(i.shape), split)
    assert abs(rep["HR@10"] - 0.10) <= 0.02
    assert abs(rep["HR@5"] - 0.05) <= 0.02


def test_oracle_scorer_is_perfect():
    split = _Split(50, np.random.default_rng(1))
    oracle = lambda u, i: (np.arange(i.shape[1]) == 0).astype(float)[None, :].repeat(len(u), 0)
    rep = evaluation.evaluate_scorer(oracle, split)
    assert rep["HR@5"] == 1.0 and rep["MRR@10"] == 1.0


def test_scorer_shape_checked():
    split = _Split(5, np.random.default_rng(1))
    with pytest.raises(ValueError):
        evaluation.evaluate_scorer(lambda u, i: np.zeros((5, 3)), split)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metrics_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    split = _Split(40, rng)
    base = rng.integers(-20, 20, size=split.items.shape).astype(float)
    r1 = evaluation.evaluate_scorer(lambda u, i: base, split)
    r2 = evaluation.evaluate_scorer(lambda u, i: np.exp(base / 4.0) * 2.0, split)
    r3 = evaluation.evaluate_scorer(lambda u, i: base**3, split)
    assert r1.flat() == r2.flat() == r3.flat()


def test_ndcg_uses_base_two():
    for r in range(1, 11):
        assert metrics_from_ranks([r], (10,))["NDCG@10"] == pytest.approx(1 / math.log2(r + 1), abs=1e-15)
