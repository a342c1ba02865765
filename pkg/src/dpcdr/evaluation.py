"""Leave-one-out ranking metrics: HR, NDCG and MRR at cutoffs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass
class MetricsReport:
    values: dict = field(default_factory=dict)  # {k: {"hr":, "ndcg":, "mrr":}}
    n_users: int = 0

    def __getitem__(self, key):
        metric, k = key.split("@")
        return self.values[int(k)][metric.lower()]

    def flat(self) -> dict:
        out = {}
        for k in sorted(self.values):
            for name in ("hr", "ndcg", "mrr"):
                out[f"{name.upper()}@{k}"] = self.values[k][name]
        return out

    def to_dict(self) -> dict:
        return {"n_users": self.n_users, **self.flat()}


def rank_position(scores, positive_index: int, item_ids=None) -> int:
    """1-based rank of one candidate; ties go to the smaller item id."""
    scores = np.asarray(scores, dtype=np.float64)
    if item_ids is None:
        item_ids = np.arange(len(scores))
    return int(
        kernels.loo_ranks(scores[None, :], np.array([positive_index]), np.asarray(item_ids, dtype=np.int64)[None, :])[0]
    )


def metrics_from_ranks(ranks, ks=(5, 10)) -> MetricsReport:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("no ranks to aggregate")
    if (ranks < 1).any():
        raise ValueError("ranks are 1-based")
    values = {}
    for k in ks:
        hit = ranks <= k
        values[int(k)] = {
            "hr": float(hit.mean()),
            "ndcg": float(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0).mean()),
            "mrr": float(np.where(hit, 1.0 / ranks, 0.0).mean()),
        }
    return MetricsReport(values, int(ranks.size))


def ranks_for_scores(scores, candidate_items) -> np.ndarray:
    """Ranks of column 0 (the held-out positive) in each candidate row."""
    candidate_items = np.asarray(candidate_items, dtype=np.int64)
    return kernels.loo_ranks(scores, np.zeros(len(candidate_items), dtype=np.int64), candidate_items)


def evaluate_scorer(score_fn, split, which: str = "test", ks=(5, 10)) -> MetricsReport:
    """Rank each user's candidates with ``score_fn(users, items) -> scores``."""
    items, _ = split.candidates(which)
    users = np.arange(split.n_users)
    scores = np.asarray(score_fn(users, items), dtype=np.float64)
    if scores.shape != items.shape:
        raise ValueError("score function returned the wrong shape")
    return metrics_from_ranks(ranks_for_scores(scores, items), ks)
