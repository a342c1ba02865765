"""Conditional Wasserstein GAN over source-domain preference rows.

The critic maximises ``L_D + L_GS`` where ``L_GS = -(tau/2)(E[D(r)^2] + E[D(r~)^2])``
damps its scores; its first-layer gradients are sanitized before every update
and each update is charged to the privacy ledger. The generator maximises
``E[D(r~)]`` and is never sanitized: it only sees the critic's output.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .nn import NetworkSpec
from .privacy import (
    DEFAULT_ALPHAS,
    PrivacyLedger,
    PrivacyParams,
    compose_and_convert,
    sanitize_first_layer,
    sanitize_whole_model,
)

log = logging.getLogger(__name__)

STREAMS = {"init": 0, "shuffle": 1, "noise": 2, "dp-noise": 3}


class NumericError(ArithmeticError):
    pass


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent named substream of a run seed."""
    return np.random.default_rng([int(seed), STREAMS[name]])


@dataclass(frozen=True)
class SppgConfig:
    epochs: int = 200
    batch_size: int = 128
    lr: float = 0.01
    rho: float = 0.9
    tau: float = 2.0
    sigma_p: float = 0.0
    clip_B: float = 1.0
    delta: float = 1e-5
    alpha_grid: tuple = DEFAULT_ALPHAS
    amplified: bool = False
    whole_model: bool = False
    noise_dim: int = 0
    critic_steps: int = 1
    latent_dim: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alpha_grid", tuple(float(a) for a in self.alpha_grid))
        if self.epochs < 0 or self.batch_size < 1 or self.critic_steps < 1 or self.latent_dim < 1:
            raise ValueError("epochs >= 0, batch_size >= 1, critic_steps >= 1 and latent_dim >= 1 required")
        if self.lr <= 0 or self.tau < 0 or self.noise_dim < 0:
            raise ValueError("lr > 0, tau >= 0 and noise_dim >= 0 required")
        if self.clip_B != 1.0:
            raise ValueError("the privacy accountant requires clip_B = 1")


@dataclass
class SppgModel:
    gen_spec: NetworkSpec
    generator: dict
    critic_spec: NetworkSpec
    critic: dict
    tau: float
    noise_dim: int
    privacy: PrivacyParams
    ledger: PrivacyLedger
    whole_model: bool = False
    opt_g: nn.OptState | None = None
    opt_d: nn.OptState | None = None


def generator_spec(n_users: int, n_items: int, latent_dim: int, noise_dim: int = 0) -> NetworkSpec:
    k = latent_dim
    return NetworkSpec((noise_dim + k, 2 * k, n_items), ("relu", "sigmoid"), ((n_users, k),))


def critic_spec(n_users: int, n_items: int, latent_dim: int) -> NetworkSpec:
    k = latent_dim
    return NetworkSpec((n_items + k, 2 * k, 1), ("relu", "identity"), ((n_users, k),))


def init_model(n_users: int, n_items: int, cfg: SppgConfig, rng=None) -> SppgModel:
    rng = rng if rng is not None else stream(cfg.seed, "init")
    gs = generator_spec(n_users, n_items, cfg.latent_dim, cfg.noise_dim)
    cs = critic_spec(n_users, n_items, cfg.latent_dim)
    gamma = min(1.0, cfg.batch_size / n_users)
    privacy = PrivacyParams(cfg.sigma_p, cfg.clip_B, cfg.delta, cfg.alpha_grid, gamma, cfg.amplified)
    return SppgModel(
        gs,
        nn.init_network(gs, rng),
        cs,
        nn.init_network(cs, rng),
        cfg.tau,
        cfg.noise_dim,
        privacy,
        PrivacyLedger(privacy.alpha_grid, cfg.amplified, gamma),
        cfg.whole_model,
    )


def _gen_trace(spec: NetworkSpec, params, user_ids, rng, noise_dim):
    user_ids = np.asarray(user_ids, dtype=np.int64)
    x = None
    if noise_dim:
        if rng is None:
            raise ValueError("noise input enabled but no rng given")
        x = rng.standard_normal((len(user_ids), noise_dim))
    return nn.forward(spec, params, x, user_ids)


def generator_forward(spec: NetworkSpec, params, user_ids, rng=None, noise_dim: int = 0) -> np.ndarray:
    """Fake preference rows in (0, 1) for the given users."""
    return _gen_trace(spec, params, user_ids, rng, noise_dim).output


def critic_scores(spec: NetworkSpec, params, prefs, user_ids) -> np.ndarray:
    return nn.forward(spec, params, prefs, user_ids).output[:, 0]


def wgan_losses(scores_real, scores_fake):
    """``(L_G, L_D)``; both players maximise their own term."""
    scores_real, scores_fake = np.asarray(scores_real), np.asarray(scores_fake)
    if scores_real.size == 0 or scores_fake.size == 0:
        raise ValueError("empty score vector")
    l_g = float(np.mean(scores_fake))
    return l_g, float(np.mean(scores_real)) - l_g


def gs_regularizer(scores_real, scores_fake, tau: float) -> float:
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return -0.5 * tau * (float(np.mean(np.square(scores_real))) + float(np.mean(np.square(scores_fake))))


def critic_objective(model: SppgModel, real_rows, fake_rows, user_ids, per_example_layers=(0,)):
    """Critic objective ``L_D + L_GS`` and the gradients of its negation.

    Real and fake rows go through the critic as one stacked batch; row ``i``
    and row ``n + i`` both belong to user ``i`` of the batch.
    """
    n = len(user_ids)
    x = np.concatenate([real_rows, fake_rows], axis=0)
    ids = np.concatenate([user_ids, user_ids])
    trace = nn.forward(model.critic_spec, model.critic, x, ids)
    s = trace.output[:, 0]
    s_r, s_f = s[:n], s[n:]
    l_g, l_d = wgan_losses(s_r, s_f)
    l_gs = gs_regularizer(s_r, s_f, model.tau)
    tau = model.tau
    # gradient of -(L_D + L_GS) with respect to the scores
    ds = np.concatenate([-(1.0 - tau * s_r) / n, (1.0 + tau * s_f) / n])
    grads = nn.backward(
        model.critic_spec,
        model.critic,
        trace,
        ds[:, None],
        per_example_layers=per_example_layers,
        example_index=np.concatenate([np.arange(n), np.arange(n)]),
    )
    return {"L_G": l_g, "L_D": l_d, "L_GS": l_gs}, grads, ids


def generator_objective(model: SppgModel, user_ids, rng=None):
    """``L_G`` and the generator gradients of ``-L_G`` (critic held fixed)."""
    n = len(user_ids)
    gt = _gen_trace(model.gen_spec, model.generator, user_ids, rng, model.noise_dim)
    ct = nn.forward(model.critic_spec, model.critic, gt.output, user_ids)
    l_g = float(np.mean(ct.output[:, 0]))
    cg = nn.backward(model.critic_spec, model.critic, ct, np.full((n, 1), -1.0 / n), want_input_grad=True)
    gg = nn.backward(model.gen_spec, model.generator, gt, cg.input_grad)
    return l_g, gg


def critic_update(model: SppgModel, real_rows, user_ids, rngs, lr, rho=0.9) -> dict:
    user_ids = np.asarray(user_ids, dtype=np.int64)
    fake = generator_forward(model.gen_spec, model.generator, user_ids, rngs["noise"], model.noise_dim)
    layers = tuple(range(model.critic_spec.n_layers)) if model.whole_model else (0,)
    losses, grads, ids = critic_objective(model, real_rows, fake, user_ids, layers)
    p = model.privacy
    if p.sigma_p > 0:
        if model.whole_model:
            grads, _ = sanitize_whole_model(
                grads, model.critic_spec.n_layers, p, rngs["dp-noise"], ids, len(model.critic_spec.embeddings)
            )
        else:
            grads, _ = sanitize_first_layer(grads, p, rngs["dp-noise"])
    model.ledger.record(len(user_ids), p.sigma_p, p.clip_B)
    model.critic, model.opt_d = nn.rmsprop_step(model.critic, grads.tensors, model.opt_d, lr, rho)
    losses["grad_norm_D"] = nn.param_norm(grads.tensors.values())
    losses["critic_grads"] = grads
    return losses


def generator_update(model: SppgModel, user_ids, rngs, lr, rho=0.9) -> float:
    l_g, gg = generator_objective(model, np.asarray(user_ids, dtype=np.int64), rngs["noise"])
    model.generator, model.opt_g = nn.rmsprop_step(model.generator, gg.tensors, model.opt_g, lr, rho)
    return l_g


def train_step(model: SppgModel, real_rows, user_ids, rngs, lr: float = 0.01, critic_steps: int = 1, rho: float = 0.9) -> dict:
    """``critic_steps`` sanitized critic updates, then one generator update."""
    if len(user_ids) > model.critic_spec.embeddings[0][0]:
        raise ValueError("batch larger than the user set")
    for _ in range(critic_steps):
        c = critic_update(model, real_rows, user_ids, rngs, lr, rho)
    l_g = generator_update(model, user_ids, rngs, lr, rho)
    report = {
        "L_G": l_g,
        "L_D": c["L_D"],
        "L_GS": c["L_GS"],
        "grad_norm_D": c["grad_norm_D"],
        "ledger_steps": model.ledger.steps,
    }
    for k in ("L_G", "L_D", "L_GS", "grad_norm_D"):
        if not math.isfinite(report[k]):
            raise NumericError(f"non-finite {k} at ledger step {model.ledger.steps}")
    return report


@dataclass
class PublishedGenerator:
    """Frozen generator released to the target domain with its final budget."""

    spec: NetworkSpec
    params: dict
    n_items_source: int
    noise_dim: int
    final_budget: dict
    fingerprint: dict

    def __post_init__(self):
        frozen = {}
        for k, v in self.params.items():
            a = np.array(v, dtype=np.float64, copy=True)
            a.flags.writeable = False
            frozen[k] = a
        self.params = frozen

    @property
    def n_users(self) -> int:
        return self.spec.embeddings[0][0]

    def sample(self, user_ids, rng=None) -> np.ndarray:
        return generator_forward(self.spec, self.params, user_ids, rng, self.noise_dim)

    def sidecar(self) -> dict:
        return {
            "format": "ppgc-generator",
            "spec": self.spec.to_dict(),
            "n_items_source": self.n_items_source,
            "noise_dim": self.noise_dim,
            "final_budget": self.final_budget,
            "fingerprint": self.fingerprint,
        }

    def save(self, path) -> None:
        path = Path(path)
        nn.save_snapshot(path, self.params)
        path.with_suffix(".json").write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "PublishedGenerator":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"generator snapshot not found: {path}")
        meta_path = path.with_suffix(".json")
        if not meta_path.exists():
            raise FileNotFoundError(f"generator sidecar not found: {meta_path}")
        meta = json.loads(meta_path.read_text())
        return cls(
            NetworkSpec.from_dict(meta["spec"]),
            nn.load_snapshot(path),
            meta["n_items_source"],
            meta["noise_dim"],
            meta["final_budget"],
            meta["fingerprint"],
        )

    @classmethod
    def zeros_like(cls, other: "PublishedGenerator") -> "PublishedGenerator":
        """All-zero stand-in (outputs 0.5 everywhere), used by the target-only baseline."""
        return cls(
            other.spec,
            {k: np.zeros_like(v) for k, v in other.params.items()},
            other.n_items_source,
            0,
            {"epsilon": 0.0, "delta": other.final_budget.get("delta"), "best_alpha": None},
            {"steps": 0, "zeros": True},
        )


def publish(model: SppgModel, cfg: SppgConfig) -> PublishedGenerator:
    eps, delta, best = compose_and_convert(model.ledger, model.privacy.delta)
    fingerprint = {
        "steps": model.ledger.steps,
        "sigma_p": model.privacy.sigma_p,
        "clip_B": model.privacy.clip_B,
        "batch_size": cfg.batch_size,
        "gamma": model.privacy.gamma,
        "amplified": model.ledger.amplified,
        "tau": model.tau,
        "whole_model": model.whole_model,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
    }
    budget = {"epsilon": eps, "delta": delta, "best_alpha": best}
    return PublishedGenerator(model.gen_spec, model.generator, model.gen_spec.out_dim, model.noise_dim, budget, fingerprint)


def train(pair, cfg: SppgConfig, history: list | None = None):
    """Train on the source matrix of ``pair``; returns ``(model, published, history)``."""
    src = pair.source.matrix
    n_users, n_items = src.shape
    model = init_model(n_users, n_items, cfg)
    rngs = {name: stream(cfg.seed, name) for name in ("shuffle", "noise", "dp-noise")}
    history = [] if history is None else history
    step = 0
    for epoch in range(cfg.epochs):
        perm = rngs["shuffle"].permutation(n_users)
        for start in range(0, n_users, cfg.batch_size):
            ids = np.sort(perm[start : start + cfg.batch_size])
            real = src[ids].toarray()
            rep = train_step(model, real, ids, rngs, cfg.lr, cfg.critic_steps, cfg.rho)
            step += 1
            history.append({"step": step, "epoch": epoch, **rep})
    return model, publish(model, cfg), history


def write_losses(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "L_G", "L_D", "L_GS", "grad_norm_D"])
        for h in history:
            w.writerow([h["step"]] + [repr(float(h[k])) for k in ("L_G", "L_D", "L_GS", "grad_norm_D")])


def windowed_std(values, window: int = 50, last: int = 500) -> float:
    """Mean standard deviation over consecutive windows of the final ``last`` values."""
    v = np.asarray(values, dtype=np.float64)[-last:]
    n = len(v) // window
    if n == 0:
        raise ValueError("not enough values for one window")
    v = v[len(v) - n * window :].reshape(n, window)
    return float(v.std(axis=1).mean())


def config_dict(cfg: SppgConfig) -> dict:
    d = asdict(cfg)
    d["alpha_grid"] = list(cfg.alpha_grid)
    return d


def with_overrides(cfg: SppgConfig, **kw) -> SppgConfig:
    return replace(cfg, **kw)
