"""Target-domain recommender fed by a published source generator.

Per user batch the objective is

    w_recon * L_recon + w_pred * L_pred + lambda_A * L_align + lambda_R * L_RC

with an autoencoder over generated source rows (``L_recon``), DMF-style
towers scoring target user/item pairs (``L_pred``), a squared distance pulling
target user profiles onto the encoded source profiles (``L_align``) and a
decorrelation penalty on the batch's user and item profiles (``L_RC``).
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .evaluation import MetricsReport, evaluate_scorer
from .nn import NetworkSpec
from .sppg import NumericError, PublishedGenerator

log = logging.getLogger(__name__)

BCE_CLAMP = 1e-7
CORR_EPS = 1e-12


@dataclass(frozen=True)
class RcdrConfig:
    epochs: int = 50
    batch_size: int = 128
    lr: float = 0.01
    lambda_A: float = 1.0
    lambda_R: float = 0.5
    w_recon: float = 1.0
    w_pred: float = 1.0
    neg_ratio: int = 4
    latent_dim: int = 200
    patience: int | None = 5
    min_epochs: int = 0  # epochs before early stopping may trigger
    zscore_eps: float = 1e-5
    profiles: str = "towers"  # or "embeddings"
    eval_k: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.profiles not in ("towers", "embeddings"):
            raise ValueError("profiles must be 'towers' or 'embeddings'")
        if min(self.lambda_A, self.lambda_R, self.w_recon, self.w_pred) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.epochs < 0 or self.batch_size < 2 or self.neg_ratio < 0 or self.latent_dim < 1 or self.min_epochs < 0:
            raise ValueError("epochs >= 0, batch_size >= 2, neg_ratio >= 0, latent_dim >= 1, min_epochs >= 0 required")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 or None")


@dataclass
class RcdrModel:
    specs: dict  # "encoder" | "decoder" | "user_tower" | "item_tower" -> NetworkSpec
    params: dict  # same keys -> Params
    lambda_A: float = 1.0
    lambda_R: float = 0.5
    zscore_eps: float = 1e-5
    w_recon: float = 1.0
    w_pred: float = 1.0
    profiles: str = "towers"

    NETS = ("encoder", "decoder", "user_tower", "item_tower")

    @property
    def encoder(self):
        return self.params["encoder"]

    @property
    def decoder(self):
        return self.params["decoder"]

    @property
    def user_tower(self):
        return self.params["user_tower"]

    @property
    def item_tower(self):
        return self.params["item_tower"]

    def tensors(self) -> dict:
        out = {}
        for name in self.NETS:
            out.update(nn.prefixed(name, self.params[name]))
        return out

    def meta(self) -> dict:
        return {
            "format": "ppgc-rcdr",
            "specs": {k: v.to_dict() for k, v in self.specs.items()},
            "lambda_A": self.lambda_A,
            "lambda_R": self.lambda_R,
            "zscore_eps": self.zscore_eps,
            "w_recon": self.w_recon,
            "w_pred": self.w_pred,
            "profiles": self.profiles,
        }

    def save(self, path) -> None:
        path = Path(path)
        nn.save_snapshot(path, self.tensors())
        path.with_suffix(".json").write_text(json.dumps(self.meta(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RcdrModel":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"model snapshot not found: {path}")
        meta = json.loads(path.with_suffix(".json").read_text())
        tensors = nn.load_snapshot(path)
        specs = {k: NetworkSpec.from_dict(v) for k, v in meta["specs"].items()}
        params = {k: nn.unprefixed(k, tensors) for k in cls.NETS}
        return cls(
            specs, params, meta["lambda_A"], meta["lambda_R"], meta["zscore_eps"], meta["w_recon"], meta["w_pred"], meta["profiles"]
        )


def init_model(n_users: int, n_items_src: int, n_items_tgt: int, cfg: RcdrConfig) -> RcdrModel:
    k = cfg.latent_dim
    specs = {
        "encoder": NetworkSpec((n_items_src, k, k), ("relu", "identity")),
        "decoder": NetworkSpec((k, k, n_items_src), ("relu", "sigmoid")),
    }
    if cfg.profiles == "towers":
        specs["user_tower"] = NetworkSpec((n_items_tgt, k, k), ("relu", "identity"))
        specs["item_tower"] = NetworkSpec((n_users, k, k), ("relu", "identity"))
    else:
        specs["user_tower"] = NetworkSpec((k, k), ("identity",), ((n_users, k),))
        specs["item_tower"] = NetworkSpec((k, k), ("identity",), ((n_items_tgt, k),))
    rng = np.random.default_rng([cfg.seed, 101])
    params = {name: nn.init_network(specs[name], rng) for name in RcdrModel.NETS}
    return RcdrModel(specs, params, cfg.lambda_A, cfg.lambda_R, cfg.zscore_eps, cfg.w_recon, cfg.w_pred, cfg.profiles)


# ---------------------------------------------------------------------------
# loss pieces


def recon_loss(reconstruction, target) -> float:
    return float(np.sum((np.asarray(reconstruction) - np.asarray(target)) ** 2))


def align_loss(z_s, z_t) -> float:
    z_s, z_t = np.asarray(z_s), np.asarray(z_t)
    if z_s.shape != z_t.shape:
        raise ValueError("profile batches must have equal shapes")
    return float(np.sum((z_s - z_t) ** 2))


def _bce_parts(logits, labels):
    p = 1.0 / (1.0 + np.exp(-logits))
    clamped = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -np.mean(labels * np.log(clamped) + (1.0 - labels) * np.log(1.0 - clamped))
    active = (p > BCE_CLAMP) & (p < 1.0 - BCE_CLAMP)
    dlogits = np.where(active, p - labels, 0.0) / len(labels)
    return float(loss), dlogits


def bce_from_probs(probs, labels) -> float:
    p = np.clip(np.asarray(probs, dtype=np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def predict_and_bce(z_t, v_t, triples):
    """Mean BCE of ``sigmoid(z_u . v_j)`` over ``(user_row, item_row, label)`` triples."""
    triples = np.asarray(triples)
    u, j, y = triples[:, 0].astype(np.int64), triples[:, 1].astype(np.int64), triples[:, 2].astype(np.float64)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    return _bce_parts(np.sum(z_t[u] * v_t[j], axis=1), y)[0]


def zscore_columns(x, eps: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("z-scoring needs at least two rows")
    xc = x - x.mean(axis=0)
    return xc / (np.sqrt(np.mean(xc * xc, axis=0)) + eps)


def cross_correlation(xbar) -> np.ndarray:
    xbar = np.asarray(xbar, dtype=np.float64)
    n = np.linalg.norm(xbar, axis=0)
    return (xbar.T @ xbar) / (np.outer(n, n) + CORR_EPS)


def _corr_penalty_and_grad(x, eps):
    """``||C - I||_F^2`` of the z-scored columns of ``x`` and its gradient."""
    n_rows = x.shape[0]
    mu = x.mean(axis=0)
    xc = x - mu
    s = np.sqrt(np.mean(xc * xc, axis=0))
    u = xc / (s + eps)
    nrm = np.linalg.norm(u, axis=0)
    den = np.outer(nrm, nrm) + CORR_EPS
    gram = u.T @ u
    c = gram / den
    p = 2.0 * (c - np.eye(c.shape[0]))
    loss = float(np.sum((c - np.eye(c.shape[0])) ** 2))
    q = p / den
    r = -p * gram / (den * den)
    dn = 2.0 * (r @ nrm)
    du = 2.0 * (u @ q) + u * np.divide(dn, nrm, out=np.zeros_like(nrm), where=nrm > 0)
    ds = -np.sum(du * xc, axis=0) / (s + eps) ** 2
    dxc = du / (s + eps) + xc * np.divide(ds, n_rows * s, out=np.zeros_like(s), where=s > 0)
    dx = dxc - dxc.mean(axis=0)
    return loss, dx


def rc_loss(z_t, v_t, eps: float = 1e-5) -> float:
    eye = np.eye(np.shape(z_t)[1])
    cz = cross_correlation(zscore_columns(z_t, eps))
    cv = cross_correlation(zscore_columns(v_t, eps))
    return float(np.sum((cz - eye) ** 2) + np.sum((cv - eye) ** 2))


def total_loss(components: dict, lambda_A: float, lambda_R: float, w_recon: float = 1.0, w_pred: float = 1.0) -> float:
    return (
        w_recon * components["recon"]
        + w_pred * components["pred"]
        + lambda_A * components["align"]
        + lambda_R * components["rc"]
    )


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    users: np.ndarray
    src_rows: np.ndarray  # generated source rows, one per user
    user_input: np.ndarray | None  # target rows (towers) or None (embeddings)
    items: np.ndarray  # distinct target items touched by the triples
    item_input: np.ndarray | None
    triples: np.ndarray  # (user_row, item_row, label)


def sample_source_profiles(pg: PublishedGenerator, enc_spec: NetworkSpec, encoder, user_ids, rng=None):
    """Generated source rows and their encoded profiles; the generator stays frozen."""
    if pg.n_items_source != enc_spec.dense_in:
        raise ValueError("generator item count does not match the encoder input width")
    rows = pg.sample(user_ids, rng)
    return rows, nn.forward(enc_spec, encoder, rows).output


def _tower_inputs(model: RcdrModel, train_matrix, users, items):
    if model.profiles == "towers":
        return train_matrix[users].toarray(), train_matrix[:, items].T.toarray()
    return None, None


def make_batch(model, pg, train_matrix, rated, users, neg_ratio, rng, gen_rng=None) -> Batch:
    """Each training positive of the batch users plus ``neg_ratio`` unrated negatives."""
    users = np.asarray(users, dtype=np.int64)
    sub = train_matrix[users]
    rows = np.repeat(np.arange(len(users)), np.diff(sub.indptr))
    pos_items = sub.indices.astype(np.int64)
    n_items = train_matrix.shape[1]
    neg_rows = np.repeat(rows, neg_ratio)
    neg_items = rng.integers(0, n_items, size=len(neg_rows))
    bad = rated[users[neg_rows], neg_items]
    while bad.any():
        neg_items[bad] = rng.integers(0, n_items, size=int(bad.sum()))
        bad = rated[users[neg_rows], neg_items]
    all_rows = np.concatenate([rows, neg_rows])
    all_items = np.concatenate([pos_items, neg_items])
    labels = np.concatenate([np.ones(len(rows)), np.zeros(len(neg_rows))])
    items, item_rows = np.unique(all_items, return_inverse=True)
    triples = np.stack([all_rows, item_rows, labels], axis=1)
    user_input, item_input = _tower_inputs(model, train_matrix, users, items)
    src_rows = pg.sample(users, gen_rng)
    return Batch(users, src_rows, user_input, items, item_input, triples)


def _profiles(model, name, x, ids):
    return nn.forward(model.specs[name], model.params[name], x, ids)


def batch_objective(model: RcdrModel, batch: Batch, params: dict | None = None):
    """Total loss, its components, and gradients for every trainable network."""
    if params is not None:
        model = copy.copy(model)
        model.params = params
    enc_t = _profiles(model, "encoder", batch.src_rows, None)
    z_s = enc_t.output
    dec_t = _profiles(model, "decoder", z_s, None)
    ut = _profiles(model, "user_tower", batch.user_input, None if batch.user_input is not None else batch.users)
    it = _profiles(model, "item_tower", batch.item_input, None if batch.item_input is not None else batch.items)
    z_t, v_t = ut.output, it.output

    diff_r = dec_t.output - batch.src_rows
    recon = float(np.sum(diff_r**2))
    diff_a = z_s - z_t
    align = float(np.sum(diff_a**2))
    u = batch.triples[:, 0].astype(np.int64)
    j = batch.triples[:, 1].astype(np.int64)
    y = batch.triples[:, 2]
    pred, dlogit = _bce_parts((z_t @ v_t.T)[u, j], y)
    rc_z, g_rz = _corr_penalty_and_grad(z_t, model.zscore_eps)
    rc_v, g_rv = _corr_penalty_and_grad(v_t, model.zscore_eps)
    comps = {"recon": recon, "pred": pred, "align": align, "rc": rc_z + rc_v}
    total = total_loss(comps, model.lambda_A, model.lambda_R, model.w_recon, model.w_pred)

    d_zt = -2.0 * model.lambda_A * diff_a + model.lambda_R * g_rz
    d_vt = model.lambda_R * g_rv
    # logit gradients summed per (user, item) cell; duplicate triples accumulate
    n_u, n_v = z_t.shape[0], v_t.shape[0]
    cell = np.bincount(u * n_v + j, weights=model.w_pred * dlogit, minlength=n_u * n_v).reshape(n_u, n_v)
    d_zt += cell @ v_t
    d_vt += cell.T @ z_t
    g_dec = nn.backward(model.specs["decoder"], model.params["decoder"], dec_t, 2.0 * model.w_recon * diff_r, want_input_grad=True)
    d_zs = g_dec.input_grad + 2.0 * model.lambda_A * diff_a
    g_enc = nn.backward(model.specs["encoder"], model.params["encoder"], enc_t, d_zs)
    g_ut = nn.backward(model.specs["user_tower"], model.params["user_tower"], ut, d_zt)
    g_it = nn.backward(model.specs["item_tower"], model.params["item_tower"], it, d_vt)
    grads = {"encoder": g_enc.tensors, "decoder": g_dec.tensors, "user_tower": g_ut.tensors, "item_tower": g_it.tensors}
    return total, comps, grads


# ---------------------------------------------------------------------------
# scoring and training


def score(model: RcdrModel, train_matrix, users, items) -> np.ndarray:
    """Logits ``z_u . v_j`` for a ``(len(users), n_candidates)`` item grid."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    flat = np.unique(items)
    ui, ii = _tower_inputs(model, train_matrix, users, flat)
    z = _profiles(model, "user_tower", ui, None if ui is not None else users).output
    v = _profiles(model, "item_tower", ii, None if ii is not None else flat).output
    col = np.searchsorted(flat, items)
    return np.einsum("uk,uck->uc", z, v[col])


def evaluate(model: RcdrModel, split, which: str = "test", ks=(5, 10)) -> MetricsReport:
    """Rank every user's held-out item against its sampled negatives."""
    return evaluate_scorer(lambda users, items: score(model, split.train.matrix, users, items), split, which, ks)


def train_target(pair, split, pg: PublishedGenerator, cfg: RcdrConfig, history: list | None = None):
    """Adam training with early stopping on validation HR@k.

    Returns ``(best_model, history, best_val_report)``.
    """
    if pg.n_items_source != pair.source.n_items or pg.n_users != pair.n_users:
        raise ValueError("published generator does not match the source domain")
    train_m = split.train.matrix
    n_users, n_items = train_m.shape
    model = init_model(n_users, pair.source.n_items, n_items, cfg)
    rated = pair.target.matrix.toarray() > 0
    rng = np.random.default_rng([cfg.seed, 202])
    gen_rng = np.random.default_rng([cfg.seed, 203]) if pg.noise_dim else None
    opt = {name: None for name in RcdrModel.NETS}
    history = [] if history is None else history
    best_hr, best_params, best_report, stale, step = -1.0, copy.deepcopy(model.params), None, 0, 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n_users)
        for start in range(0, n_users, cfg.batch_size):
            users = np.sort(perm[start : start + cfg.batch_size])
            if len(users) < 2:
                continue
            batch = make_batch(model, pg, train_m, rated, users, cfg.neg_ratio, rng, gen_rng)
            total, comps, grads = batch_objective(model, batch)
            if not math.isfinite(total):
                raise NumericError(f"non-finite target loss at step {step + 1}")
            for name in RcdrModel.NETS:
                model.params[name], opt[name] = nn.adam_step(model.params[name], grads[name], opt[name], cfg.lr)
            step += 1
            history.append({"step": step, "epoch": epoch, **comps, "total": total})
        if cfg.patience is None:
            continue
        report = evaluate(model, split, "val", (cfg.eval_k,))
        hr = report.values[cfg.eval_k]["hr"]
        if hr > best_hr:
            best_hr, best_params, best_report, stale = hr, copy.deepcopy(model.params), report, 0
        elif epoch + 1 >= cfg.min_epochs:
            stale += 1
            if stale >= cfg.patience:
                break
    if cfg.patience is not None and best_report is not None:
        model.params = best_params
    return model, history, best_report


def write_losses(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "recon", "pred", "align", "rc", "total"])
        for h in history:
            w.writerow([h["step"]] + [repr(float(h[k])) for k in ("recon", "pred", "align", "rc", "total")])


def mean_offdiag_abs_corr(x, eps: float = 1e-5) -> float:
    c = cross_correlation(zscore_columns(x, eps))
    k = c.shape[0]
    return float(np.abs(c[~np.eye(k, dtype=bool)]).mean())


def config_dict(cfg: RcdrConfig) -> dict:
    return asdict(cfg)
