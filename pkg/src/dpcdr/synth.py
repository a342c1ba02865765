"""Clustered two-domain implicit-feedback data for desk-scale experiments.

Users are assigned to latent clusters round-robin; each cluster owns a
disjoint block of items in both domains. A user's positives come from the
cluster block except for a ``noise_flip_prob`` fraction drawn from outside
it, so cross-domain preferences agree through the shared cluster.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dataio import BinaryRatingMatrix, DataError, DomainPair, align_domains


@dataclass(frozen=True)
class SynthSpec:
    n_users: int = 300
    n_items_src: int = 200
    n_items_tgt: int = 200
    n_latent_clusters: int = 4
    positives_per_user_src: int = 20
    positives_per_user_tgt: int = 8
    noise_flip_prob: float = 0.1
    noise_flip_prob_tgt: float | None = None  # defaults to noise_flip_prob
    seed: int = 0

    def __post_init__(self):
        if min(self.positives_per_user_src, self.positives_per_user_tgt) < 5:
            raise DataError("every user needs at least 5 positives per domain")
        if self.n_latent_clusters < 1 or self.n_users < self.n_latent_clusters:
            raise DataError("need at least one user per cluster")
        for p in (self.noise_flip_prob, self.flip_tgt):
            if not 0 <= p <= 1:
                raise DataError("flip probabilities must lie in [0, 1]")
        for n_items, pos in ((self.n_items_src, self.positives_per_user_src), (self.n_items_tgt, self.positives_per_user_tgt)):
            block = n_items // self.n_latent_clusters
            if block < pos or n_items - block < pos:
                raise DataError(f"item blocks of size {block} cannot hold {pos} positives per user")

    @property
    def flip_tgt(self) -> float:
        return self.noise_flip_prob if self.noise_flip_prob_tgt is None else self.noise_flip_prob_tgt

    def to_dict(self) -> dict:
        return asdict(self)


def cluster_of(spec: SynthSpec) -> np.ndarray:
    return np.arange(spec.n_users) % spec.n_latent_clusters


def item_blocks(n_items: int, n_clusters: int) -> list:
    """Item index ranges owned by each cluster (leftover items belong to none)."""
    size = n_items // n_clusters
    return [np.arange(c * size, (c + 1) * size) for c in range(n_clusters)]


def _domain(spec, rng, n_items, positives, flip, prefix):
    clusters = cluster_of(spec)
    blocks = item_blocks(n_items, spec.n_latent_clusters)
    everything = np.arange(n_items)
    pairs = []
    for u in range(spec.n_users):
        own = blocks[clusters[u]]
        other = np.setdiff1d(everything, own, assume_unique=True)
        n_out = int(rng.binomial(positives, flip))
        chosen = np.concatenate(
            [rng.choice(own, positives - n_out, replace=False), rng.choice(other, n_out, replace=False)]
        )
        pairs.extend((f"u{u:05d}", f"{prefix}{i:05d}") for i in np.sort(chosen))
    return BinaryRatingMatrix.from_pairs(
        pairs,
        user_keys=[f"u{u:05d}" for u in range(spec.n_users)],
        item_keys=[f"{prefix}{i:05d}" for i in range(n_items)],
    )


def generate_synthetic(spec: SynthSpec, min_interactions: int = 5) -> DomainPair:
    rng = np.random.default_rng([spec.seed, 7919])
    src = _domain(spec, rng, spec.n_items_src, spec.positives_per_user_src, spec.noise_flip_prob, "s")
    tgt = _domain(spec, rng, spec.n_items_tgt, spec.positives_per_user_tgt, spec.flip_tgt, "t")
    return align_domains(src, tgt, min_interactions)


def raw_synthetic(spec: SynthSpec) -> DomainPair:
    """Generated matrices without filtering (every item kept, possibly cold)."""
    rng = np.random.default_rng([spec.seed, 7919])
    src = _domain(spec, rng, spec.n_items_src, spec.positives_per_user_src, spec.noise_flip_prob, "s")
    tgt = _domain(spec, rng, spec.n_items_tgt, spec.positives_per_user_tgt, spec.flip_tgt, "t")
    return DomainPair(src, tgt)
