"""Rating ingestion, binarization, filtering, domain alignment and the
leave-one-out evaluation split, plus the CSV snapshot of prepared data."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass
class RatingTable:
    rows: list  # (user_key, item_key, rating)
    n_duplicates: int = 0
    n_parse_errors: int = 0

    def __len__(self):
        return len(self.rows)


@dataclass
class BinaryRatingMatrix:
    """Implicit-feedback matrix; indices follow the order of ``user_keys``/``item_keys``."""

    matrix: sp.csr_matrix
    user_keys: tuple
    item_keys: tuple

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=np.float64)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.data[:] = 1.0
        m.sort_indices()
        self.matrix = m
        self.user_keys = tuple(self.user_keys)
        self.item_keys = tuple(self.item_keys)
        if m.shape != (len(self.user_keys), len(self.item_keys)):
            raise DataError("matrix shape does not match the key maps")

    @property
    def n_users(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_items(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @property
    def user_index(self) -> dict:
        return {k: i for i, k in enumerate(self.user_keys)}

    @property
    def item_index(self) -> dict:
        return {k: i for i, k in enumerate(self.item_keys)}

    def entries(self) -> set:
        coo = self.matrix.tocoo()
        return set(zip(coo.row.tolist(), coo.col.tolist()))

    def user_items(self, u: int) -> np.ndarray:
        m = self.matrix
        return m.indices[m.indptr[u] : m.indptr[u + 1]]

    def user_counts(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.matrix.indices, minlength=self.n_items)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @classmethod
    def from_pairs(cls, pairs, user_keys=None, item_keys=None) -> "BinaryRatingMatrix":
        """Build from ``(user_key, item_key)`` pairs; keys are indexed in sorted order."""
        pairs = list(pairs)
        users = tuple(sorted({u for u, _ in pairs})) if user_keys is None else tuple(user_keys)
        items = tuple(sorted({i for _, i in pairs})) if item_keys is None else tuple(item_keys)
        ui = {k: n for n, k in enumerate(users)}
        ii = {k: n for n, k in enumerate(items)}
        rows = np.array([ui[u] for u, _ in pairs], dtype=np.int64)
        cols = np.array([ii[i] for _, i in pairs], dtype=np.int64)
        m = sp.csr_matrix((np.ones(len(pairs)), (rows, cols)), shape=(len(users), len(items)))
        return cls(m, users, items)

    def pairs(self) -> list:
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [(self.user_keys[r], self.item_keys[c]) for r, c in zip(coo.row[order], coo.col[order])]

    def subset(self, user_mask, item_mask) -> "BinaryRatingMatrix":
        users = np.flatnonzero(user_mask)
        items = np.flatnonzero(item_mask)
        m = self.matrix[users][:, items]
        return BinaryRatingMatrix(
            m, [self.user_keys[i] for i in users], [self.item_keys[i] for i in items]
        )


@dataclass
class DomainPair:
    source: BinaryRatingMatrix
    target: BinaryRatingMatrix

    def __post_init__(self):
        if self.source.user_keys != self.target.user_keys:
            raise DataError("source and target must share an identical user index")

    @property
    def n_users(self) -> int:
        return self.source.n_users


@dataclass
class EvalSplit:
    """Held-out validation/test positives with their sampled negatives.

    ``train`` is the target matrix with both held-out items removed.
    """

    val_item: np.ndarray
    test_item: np.ndarray
    val_negatives: np.ndarray  # (n_users, n_negatives)
    test_negatives: np.ndarray
    train: BinaryRatingMatrix

    @property
    def n_users(self) -> int:
        return len(self.val_item)

    def candidates(self, which: str):
        """``(items, positive_column)``: positive first, then its negatives."""
        if which == "val":
            pos, neg = self.val_item, self.val_negatives
        elif which == "test":
            pos, neg = self.test_item, self.test_negatives
        else:
            raise ValueError("which must be 'val' or 'test'")
        items = np.concatenate([pos[:, None], neg], axis=1)
        return items, np.zeros(len(pos), dtype=np.int64)


# ---------------------------------------------------------------------------


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_ratings(path) -> RatingTable:
    """Parse ``user,item,rating[,timestamp]`` lines; a header is auto-detected."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"rating file not found: {path}")
    table: dict = {}
    n_dup = n_err = 0
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh)):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3 or len(row) > 4:
                n_err += 1
                continue
            user, item, rating = (c.strip() for c in row[:3])
            if not _is_number(rating):
                if lineno != 0:
                    n_err += 1
                continue
            r = float(rating)
            if not np.isfinite(r):
                n_err += 1
                continue
            key = (user, item)
            if key in table:
                n_dup += 1
                del table[key]  # re-insert so replay order reflects the last occurrence
            table[key] = r
    if n_dup:
        log.info("%s: %d duplicate (user, item) rows, last occurrence kept", path, n_dup)
    if n_err:
        log.warning("%s: %d unparseable lines skipped", path, n_err)
    if not table:
        raise DataError(f"{path}: zero valid rows")
    return RatingTable([(u, i, r) for (u, i), r in table.items()], n_dup, n_err)


def binarize(table: RatingTable, threshold: float = 3.0) -> BinaryRatingMatrix:
    if threshold <= 0:
        raise DataError("threshold must be positive")
    pairs = [(u, i) for u, i, r in table.rows if r >= threshold]
    if not pairs:
        raise DataError("no rating reaches the positivity threshold")
    return BinaryRatingMatrix.from_pairs(pairs)


def filter_min_interactions(m: BinaryRatingMatrix, min_interactions: int = 5) -> BinaryRatingMatrix:
    """Drop users and items below the interaction floor until nothing changes."""
    while True:
        keep_u = m.user_counts() >= min_interactions
        keep_i = m.item_counts() >= min_interactions
        if keep_u.all() and keep_i.all():
            break
        m = m.subset(keep_u, keep_i)
        if m.n_users == 0 or m.n_items == 0:
            raise DataError("filtering removed every interaction")
    if m.nnz == 0:
        raise DataError("filtering removed every interaction")
    return m


def _restrict_users(m: BinaryRatingMatrix, keys: tuple) -> BinaryRatingMatrix:
    idx = m.user_index
    rows = m.matrix[[idx[k] for k in keys]]
    return BinaryRatingMatrix(rows, keys, m.item_keys)


def align_domains(src: BinaryRatingMatrix, tgt: BinaryRatingMatrix, min_interactions: int = 5) -> DomainPair:
    """Keep users present in both domains, iterating intersection and filtering."""
    if src.nnz == 0 or tgt.nnz == 0:
        raise DataError("both domains must be non-empty")
    while True:
        shared = tuple(sorted(set(src.user_keys) & set(tgt.user_keys)))
        if not shared:
            raise DataError("the domains share no users")
        src = filter_min_interactions(_restrict_users(src, shared), min_interactions)
        tgt = filter_min_interactions(_restrict_users(tgt, shared), min_interactions)
        if src.user_keys == tgt.user_keys == shared:
            return DomainPair(src, tgt)


def make_eval_split(pair: DomainPair, n_negatives: int = 99, seed: int = 0) -> EvalSplit:
    """Hold out two target positives per user and draw negatives for each."""
    tgt = pair.target
    rng = np.random.default_rng(seed)
    n_u, n_i = tgt.n_users, tgt.n_items
    val = np.empty(n_u, dtype=np.int64)
    test = np.empty(n_u, dtype=np.int64)
    val_neg = np.empty((n_u, n_negatives), dtype=np.int64)
    test_neg = np.empty((n_u, n_negatives), dtype=np.int64)
    keep = tgt.matrix.tolil(copy=True)
    for u in range(n_u):
        pos = tgt.user_items(u)
        if len(pos) < 3:
            raise DataError(f"user {tgt.user_keys[u]!r} has fewer than 3 target positives")
        unrated = np.setdiff1d(np.arange(n_i), pos, assume_unique=True)
        if len(unrated) < n_negatives:
            raise DataError(
                f"user {tgt.user_keys[u]!r} has only {len(unrated)} unrated items, {n_negatives} negatives needed"
            )
        v, t = rng.choice(pos, size=2, replace=False)
        val[u], test[u] = v, t
        val_neg[u] = rng.choice(unrated, size=n_negatives, replace=False)
        test_neg[u] = rng.choice(unrated, size=n_negatives, replace=False)
        keep[u, v] = 0
        keep[u, t] = 0
    train = BinaryRatingMatrix(keep.tocsr(), tgt.user_keys, tgt.item_keys)
    return EvalSplit(val, test, val_neg, test_neg, train)


# ---------------------------------------------------------------------------
# snapshot: interactions_src.csv, interactions_tgt.csv, eval_split.csv


def _write_interactions(path, m: BinaryRatingMatrix):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "item"])
        w.writerows(m.pairs())


def _read_interactions(path) -> BinaryRatingMatrix:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[:2] != ["user", "item"]:
            raise DataError(f"{path}: expected a user,item header")
        return BinaryRatingMatrix.from_pairs([(row[0], row[1]) for row in r if row])


def save_prepared(directory, pair: DomainPair, split: EvalSplit) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_interactions(d / "interactions_src.csv", pair.source)
    _write_interactions(d / "interactions_tgt.csv", pair.target)
    keys_u, keys_i = pair.target.user_keys, pair.target.item_keys
    n_neg = split.val_negatives.shape[1]
    with open(d / "eval_split.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "role", "item"] + [f"neg_{k}" for k in range(1, n_neg + 1)])
        for u in range(split.n_users):
            w.writerow([keys_u[u], "val", keys_i[split.val_item[u]]] + [keys_i[j] for j in split.val_negatives[u]])
            w.writerow([keys_u[u], "test", keys_i[split.test_item[u]]] + [keys_i[j] for j in split.test_negatives[u]])


def load_prepared(directory):
    d = Path(directory)
    for name in ("interactions_src.csv", "interactions_tgt.csv", "eval_split.csv"):
        if not (d / name).exists():
            raise FileNotFoundError(f"prepared data incomplete: {d / name} missing")
    src = _read_interactions(d / "interactions_src.csv")
    tgt = _read_interactions(d / "interactions_tgt.csv")
    pair = DomainPair(src, tgt)
    ui, ii = tgt.user_index, tgt.item_index
    n_u = tgt.n_users
    val = np.full(n_u, -1, dtype=np.int64)
    test = np.full(n_u, -1, dtype=np.int64)
    val_neg = test_neg = None
    with open(d / "eval_split.csv", newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        n_neg = len(header) - 3
        val_neg = np.full((n_u, n_neg), -1, dtype=np.int64)
        test_neg = np.full((n_u, n_neg), -1, dtype=np.int64)
        for row in r:
            if not row:
                continue
            u = ui[row[0]]
            items = [ii[k] for k in row[2:]]
            if row[1] == "val":
                val[u], val_neg[u] = items[0], items[1:]
            elif row[1] == "test":
                test[u], test_neg[u] = items[0], items[1:]
            else:
                raise DataError(f"unknown split role {row[1]!r}")
    if (val < 0).any() or (test < 0).any():
        raise DataError("eval_split.csv does not cover every user")
    keep = tgt.matrix.tolil(copy=True)
    for u in range(n_u):
        keep[u, val[u]] = 0
        keep[u, test[u]] = 0
    split = EvalSplit(val, test, val_neg, test_neg, BinaryRatingMatrix(keep.tocsr(), tgt.user_keys, tgt.item_keys))
    return pair, split


def prepare(src_path, tgt_path, threshold: float = 3.0, min_interactions: int = 5, n_negatives: int = 99, seed: int = 0):
    src = filter_min_interactions(binarize(load_ratings(src_path), threshold), min_interactions)
    tgt = filter_min_interactions(binarize(load_ratings(tgt_path), threshold), min_interactions)
    pair = align_domains(src, tgt, min_interactions)
    return pair, make_eval_split(pair, n_negatives, seed)
