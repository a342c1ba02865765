"""Gradient sanitization and Renyi-DP accounting for the source-domain critic.

Sanitization works on per-user gradients of the critic: each user's own-loss
gradient is clipped to norm ``B``, the clipped gradients are summed, one
Gaussian draw with per-coordinate std ``sigma_p * B`` is added, and the
result is divided by the batch size to return to the mean-objective scale
the optimizers see.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .nn import Grads

DEFAULT_ALPHAS = (1.5, 2.0, 3.0, 4.0, 8.0, 16.0, 32.0, 64.0)


class PrivacyError(ValueError):
    pass


@dataclass(frozen=True)
class PrivacyParams:
    sigma_p: float = 0.0
    clip_B: float = 1.0
    delta: float = 1e-5
    alpha_grid: tuple = DEFAULT_ALPHAS
    gamma: float = 1.0
    amplified: bool = False

    def __post_init__(self):
        if self.sigma_p < 0:
            raise PrivacyError("sigma_p must be >= 0")
        if self.clip_B <= 0:
            raise PrivacyError("clip_B must be > 0")
        if not 0 < self.delta < 1:
            raise PrivacyError("delta must lie in (0, 1)")
        if not 0 < self.gamma <= 1:
            raise PrivacyError("gamma must lie in (0, 1]")
        if not self.alpha_grid or any(a <= 1 for a in self.alpha_grid):
            raise PrivacyError("alpha grid must be non-empty with every order > 1")
        object.__setattr__(self, "alpha_grid", tuple(float(a) for a in self.alpha_grid))


def clip_gradient(g, B: float):
    if B <= 0:
        raise PrivacyError("clipping constant must be positive")
    g = np.asarray(g, dtype=np.float64)
    return g / max(1.0, float(np.linalg.norm(g)) / B)


def gaussian_perturb(g, sigma_p: float, B: float, rng: np.random.Generator):
    g = np.asarray(g, dtype=np.float64)
    if sigma_p == 0:
        return g.copy()
    return g + rng.normal(0.0, sigma_p * B, size=g.shape)


def _layer_clip_factors(grads: Grads, layer: int, bound: float, n: int):
    a, d = grads.per_example[layer]
    sq = kernels.grouped_sq_norms(a, d, grads.example_index, grads.n_examples, 1.0)
    # own-loss gradient of each user is n times its share of the mean objective
    norms = n * np.sqrt(np.maximum(sq, 0.0))
    return 1.0 / np.maximum(1.0, norms / bound)


def clipped_layer_sum(grads: Grads, layer: int, bound: float):
    """Sum of clipped per-user own-loss gradients of one dense layer (pre-noise)."""
    if layer not in grads.per_example:
        raise PrivacyError("per-example gradients missing for the sanitized layer")
    n = grads.n_examples
    c = _layer_clip_factors(grads, layer, bound, n)
    a, d = grads.per_example[layer]
    scaled = c[grads.example_index, None] * d
    return n * (a.T @ scaled), n * scaled.sum(axis=0)


def _sanitize_dense(grads, layer, bound, noise_std, rng, out):
    n = grads.n_examples
    a, d = grads.per_example[layer]
    c = _layer_clip_factors(grads, layer, bound, n)
    scaled = c[grads.example_index, None] * d
    w = a.T @ scaled
    b = scaled.sum(axis=0)
    if noise_std > 0:
        w = w + rng.normal(0.0, noise_std, size=w.shape) / n
        b = b + rng.normal(0.0, noise_std, size=b.shape) / n
    out[f"W{layer}"] = w
    out[f"b{layer}"] = b


def _sanitize_embedding(grads, table, ids, bound, noise_std, rng, out):
    n = grads.n_examples
    rows = grads.embedding_rows[table]
    per_user = np.zeros((n, rows.shape[1]))
    np.add.at(per_user, grads.example_index, rows)
    user_of = np.zeros(n, dtype=np.int64)
    user_of[grads.example_index] = ids
    c = 1.0 / np.maximum(1.0, n * np.linalg.norm(per_user, axis=1) / bound)
    e = np.zeros_like(grads.tensors[f"E{table}"])
    np.add.at(e, user_of, c[:, None] * per_user)
    if noise_std > 0:
        e = e + rng.normal(0.0, noise_std, size=e.shape) / n
    out[f"E{table}"] = e


def sanitize_first_layer(grads: Grads, p: PrivacyParams, rng: np.random.Generator) -> tuple[Grads, dict]:
    """Clip and perturb the first dense layer; every other tensor passes through.

    Returns the sanitized gradients and the inputs the ledger records.
    """
    if 0 not in grads.per_example:
        raise PrivacyError("per-example first-layer gradients are required")
    tensors = dict(grads.tensors)
    _sanitize_dense(grads, 0, p.clip_B, p.sigma_p * p.clip_B, rng, tensors)
    out = Grads(tensors, grads.input_grad, grads.per_example, grads.example_index, grads.n_examples, grads.embedding_rows)
    return out, {"batch_size": grads.n_examples, "sigma_p": p.sigma_p, "clip_B": p.clip_B}


def sanitize_whole_model(
    grads: Grads, n_layers: int, p: PrivacyParams, rng: np.random.Generator, ids=None, n_tables: int = 0
) -> tuple[Grads, dict]:
    """Sanitize every tensor of the critic (the ablation variant).

    ``ids`` gives the embedding id of every trace row (needed when
    ``n_tables > 0``).

    With ``L`` sanitized units (dense layers plus embedding tables) each unit
    is clipped to ``B / sqrt(L)`` and perturbed with std ``sigma_p * B / sqrt(L)``,
    so the per-user sensitivity of the whole gradient stays within ``2B``.
    """
    units = n_layers + n_tables
    bound = p.clip_B / math.sqrt(units)
    noise = p.sigma_p * bound
    tensors = dict(grads.tensors)
    for l in range(n_layers):
        if l not in grads.per_example:
            raise PrivacyError(f"per-example gradients missing for layer {l}")
        _sanitize_dense(grads, l, bound, noise, rng, tensors)
    for t in range(n_tables):
        _sanitize_embedding(grads, t, np.asarray(ids), bound, noise, rng, tensors)
    out = Grads(tensors, grads.input_grad, grads.per_example, grads.example_index, grads.n_examples, grads.embedding_rows)
    return out, {"batch_size": grads.n_examples, "sigma_p": p.sigma_p, "clip_B": p.clip_B}


# ---------------------------------------------------------------------------
# accounting


def per_step_rdp(alpha: float, sigma_p: float, batch_size: int, B: float = 1.0) -> float:
    """RDP cost of one critic update treated as an N-fold Gaussian composition."""
    if alpha <= 1:
        raise PrivacyError("RDP order must exceed 1")
    if B != 1:
        raise PrivacyError("the per-step bound holds for clipping constant B = 1 only")
    if sigma_p == 0:
        return math.inf
    return 2.0 * batch_size * alpha / sigma_p**2


def subsampled_rdp(alpha: int, gamma: float, eps_fn: Callable[[int], float]) -> float:
    """RDP of a Poisson-subsampled mechanism with per-order cost ``eps_fn``."""
    if gamma >= 1 or gamma < 0:
        raise PrivacyError("sampling rate must lie in [0, 1)")
    if int(alpha) != alpha or alpha < 2:
        raise PrivacyError("subsampled RDP needs an integer order >= 2")
    alpha = int(alpha)
    if gamma == 0:
        return 0.0
    log_ratio = math.log(gamma) - math.log1p(-gamma)
    terms = [0.0, math.log(alpha) + log_ratio]
    for j in range(2, alpha + 1):
        e = eps_fn(j)
        if math.isinf(e):
            return math.inf
        log_comb = math.lgamma(alpha + 1) - math.lgamma(j + 1) - math.lgamma(alpha - j + 1)
        terms.append(log_comb + j * log_ratio + (j - 1) * e)
    top = max(terms)
    log_sum = top + math.log(sum(math.exp(t - top) for t in terms))
    val = alpha / (alpha - 1) * math.log1p(-gamma) + log_sum / (alpha - 1)
    return max(val, 0.0)


def rdp_to_dp(rdp: float, alpha: float, delta: float) -> float:
    return rdp + math.log(1.0 / delta) / (alpha - 1)


@dataclass
class PrivacyLedger:
    """Per-step RDP costs on a fixed order grid."""

    alpha_grid: tuple = DEFAULT_ALPHAS
    amplified: bool = False
    gamma: float = 1.0
    costs: list = field(default_factory=list)
    batch_sizes: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.costs)

    def orders(self) -> tuple:
        if self.amplified and self.gamma < 1:
            return tuple(a for a in self.alpha_grid if float(a).is_integer() and a >= 2)
        return tuple(self.alpha_grid)

    def step_cost(self, batch_size: int, sigma_p: float, clip_B: float) -> np.ndarray:
        orders = self.orders()
        if self.amplified and self.gamma < 1:
            single = lambda j: per_step_rdp(j, sigma_p, 1, clip_B)
            return np.array([subsampled_rdp(int(a), self.gamma, single) for a in orders])
        return np.array([per_step_rdp(a, sigma_p, batch_size, clip_B) for a in orders])

    def record(self, batch_size: int, sigma_p: float, clip_B: float) -> None:
        self.costs.append(self.step_cost(batch_size, sigma_p, clip_B))
        self.batch_sizes.append(int(batch_size))

    def totals(self) -> np.ndarray:
        if not self.costs:
            return np.zeros(len(self.orders()))
        return np.sum(self.costs, axis=0)


def compose_and_convert(ledger: PrivacyLedger, delta: float):
    """Compose the ledger additively and convert to ``(epsilon, delta, best_alpha)``.

    An empty ledger has spent nothing and reports epsilon 0.
    """
    orders = ledger.orders()
    if not orders:
        raise PrivacyError("empty alpha grid")
    if not 0 < delta < 1:
        raise PrivacyError("delta must lie in (0, 1)")
    if ledger.steps == 0:
        return 0.0, delta, None
    totals = ledger.totals()
    best, best_alpha = math.inf, None
    for a, tot in zip(orders, totals):
        eps = rdp_to_dp(float(tot), a, delta)
        if eps < best:
            best, best_alpha = eps, a
    return best, delta, best_alpha


def per_alpha_report(ledger: PrivacyLedger, delta: float) -> dict:
    return {
        f"{a:g}": {"rdp": float(t), "epsilon": rdp_to_dp(float(t), a, delta)}
        for a, t in zip(ledger.orders(), ledger.totals())
    }


def account(
    sigma_p: float,
    clip_B: float,
    batch_size: int,
    n_users: int,
    steps: int,
    delta: float,
    alphas: Sequence = DEFAULT_ALPHAS,
    amplified: bool = False,
) -> dict:
    """Budget of ``steps`` critic updates, as reported by the accountant CLI."""
    ledger = PrivacyLedger(tuple(alphas), amplified, min(1.0, batch_size / n_users))
    cost = ledger.step_cost(batch_size, sigma_p, clip_B)
    ledger.costs = [cost] * steps
    ledger.batch_sizes = [batch_size] * steps
    eps, delta, best = compose_and_convert(ledger, delta)
    return {
        "epsilon": eps,
        "delta": delta,
        "best_alpha": best,
        "per_alpha": per_alpha_report(ledger, delta),
        "steps": steps,
        "amplified": bool(amplified and ledger.gamma < 1),
    }
