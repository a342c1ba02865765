"""Dirac-GAN dynamics with an optional damping controller.

The critic parameter follows ``d theta_D/dt = m - theta_G - tau * theta_D`` and
the generator ``d theta_G/dt = theta_D``, where the target
``m = c - (1 - 2 phi) sigma_gr`` is the noise-perturbed data location.
"""

from __future__ import annotations

import cmath
import csv
from dataclasses import dataclass

import numpy as np

from . import kernels


class DiracError(ArithmeticError):
    pass


@dataclass(frozen=True)
class DiracConfig:
    c: float | tuple = 0.0
    phi: float = 0.5
    sigma_gr: float | tuple = 0.0
    tau: float = 0.0
    theta_D0: float | tuple = 0.0
    theta_G0: float | tuple = 1.0
    t_max: float = 20.0
    h: float = 1e-3

    def __post_init__(self):
        if self.h <= 0 or self.t_max <= 0:
            raise ValueError("h and t_max must be positive")
        if not 0 <= self.phi <= 1:
            raise ValueError("phi must lie in [0, 1]")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if np.any(np.asarray(self.sigma_gr) < 0):
            raise ValueError("sigma_gr must be >= 0")

    def target(self) -> np.ndarray:
        c = np.atleast_1d(np.asarray(self.c, dtype=np.float64))
        s = np.atleast_1d(np.asarray(self.sigma_gr, dtype=np.float64))
        return c - (1.0 - 2.0 * self.phi) * s


@dataclass
class DiracTrajectory:
    t: np.ndarray
    theta_D: np.ndarray  # (n_samples, dim)
    theta_G: np.ndarray
    V: np.ndarray
    m: np.ndarray

    def final_state(self):
        return self.theta_D[-1], self.theta_G[-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            dim = self.theta_D.shape[1]
            if dim == 1:
                w.writerow(["t", "theta_D", "theta_G", "V"])
                for row in zip(self.t, self.theta_D[:, 0], self.theta_G[:, 0], self.V):
                    w.writerow([repr(float(x)) for x in row])
            else:
                w.writerow(["t"] + [f"theta_D_{i}" for i in range(dim)] + [f"theta_G_{i}" for i in range(dim)] + ["V"])
                for k in range(len(self.t)):
                    w.writerow([repr(float(x)) for x in (self.t[k], *self.theta_D[k], *self.theta_G[k], self.V[k])])


def simulate(cfg: DiracConfig) -> DiracTrajectory:
    m = cfg.target()
    dim = m.shape[0]
    d0 = np.broadcast_to(np.asarray(cfg.theta_D0, dtype=np.float64), (dim,))
    g0 = np.broadcast_to(np.asarray(cfg.theta_G0, dtype=np.float64), (dim,))
    n_steps = int(round(cfg.t_max / cfg.h))
    td, tg = kernels.dirac_rk4(d0, g0, m, cfg.tau, cfg.h, n_steps)
    if not (np.all(np.isfinite(td)) and np.all(np.isfinite(tg))):
        raise DiracError("trajectory became non-finite")
    t = np.arange(n_steps + 1) * cfg.h
    V = np.sum((tg - m) ** 2 + td**2, axis=1)
    return DiracTrajectory(t, td, tg, V, m)


def sweep_phi(cfg: DiracConfig, phis=(0.0, 0.25, 0.5, 0.75, 1.0)) -> list:
    """Re-simulate across interpolation weights to show the spread of targets."""
    out = []
    for phi in phis:
        params = {**cfg.__dict__, "phi": phi}
        out.append(simulate(DiracConfig(**params)))
    return out


def poles(tau: float) -> tuple:
    """Roots of ``s^2 + tau s + 1``, ordered by real part then imaginary part."""
    disc = cmath.sqrt(tau * tau - 4.0)
    r1, r2 = (-tau + disc) / 2.0, (-tau - disc) / 2.0
    return tuple(sorted((complex(r1), complex(r2)), key=lambda z: (z.real, z.imag)))


def stability_report(tau: float) -> str:
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return "stable" if all(p.real < 0 for p in poles(tau)) else "unstable-marginal"
