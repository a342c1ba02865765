import copy
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpcdr import nn, rcdr, sppg
from dpcdr.dataio import make_eval_split
from dpcdr.rcdr import RcdrConfig
from dpcdr.synth import SynthSpec, raw_synthetic


def test_recon_and_align_examples():
    x = np.arange(12.0).reshape(2, 6)
    assert rcdr.recon_loss(x, x) == 0.0
    assert rcdr.recon_loss(x + 1.0, x) == 12.0
    assert rcdr.recon_loss(x[:1] + 1.0, x[:1]) == 6.0
    z = np.zeros((2, 3))
    assert rcdr.align_loss(z, z) == 0.0
    assert rcdr.align_loss(z, z + 1) == 6.0
    assert rcdr.align_loss(z, z + 2) == 4 * rcdr.align_loss(z, z + 1)
    with pytest.raises(ValueError):
        rcdr.align_loss(z, np.zeros((3, 2)))


def test_bce_examples():
    assert rcdr.predict_and_bce(np.zeros((1, 2)), np.zeros((1, 2)), [[0, 0, 1]]) == pytest.approx(math.log(2), abs=1e-12)
    assert rcdr.bce_from_probs([1.0], [1]) == pytest.approx(1e-7, rel=1e-3)
    p = np.array([0.2, 0.7, 0.99])
    assert rcdr.bce_from_probs(p, [1, 1, 1]) == pytest.approx(rcdr.bce_from_probs(1 - p, [0, 0, 0]), rel=1e-14)
    with pytest.raises(ValueError):
        rcdr.predict_and_bce(np.zeros((1, 2)), np.zeros((1, 2)), [[0, 0, 0.5]])


def test_bce_gradient_is_zero_where_clamped():
    loss, d = rcdr._bce_parts(np.array([40.0, -40.0, 0.0]), np.array([1.0, 1.0, 1.0]))
    assert d[0] == 0.0 and d[1] == 0.0 and d[2] == pytest.approx(-0.5 / 3)
    assert math.isfinite(loss)


def test_zscore_examples():
    out = rcdr.zscore_columns(np.array([[1.0], [-1.0]]))
    np.testing.assert_allclose(out[:, 0], [1 / (1 + 1e-5), -1 / (1 + 1e-5)])
    assert not rcdr.zscore_columns(np.full((4, 2), 3.0)).any()
    x = np.random.default_rng(0).normal(5, 3, size=(50, 4))
    assert np.max(np.abs(rcdr.zscore_columns(x).mean(axis=0))) < 1e-12
    with pytest.raises(ValueError):
        rcdr.zscore_columns(np.ones((1, 3)))


def test_cross_correlation_examples():
    c = rcdr.cross_correlation(np.array([[1.0, 1.0], [-1.0, -1.0]]))
    np.testing.assert_allclose(c, np.ones((2, 2)), atol=1e-12)
    c = rcdr.cross_correlation(np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]))
    np.testing.assert_allclose(c, np.eye(2), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 20), st.integers(1, 6))
def test_cross_correlation_symmetric_and_bounded(seed, n, k):
    c = rcdr.cross_correlation(np.random.default_rng(seed).normal(size=(n, k)))
    assert np.array_equal(c, c.T)
    assert np.all(np.abs(c) <= 1 + 1e-12)


def test_rc_loss_examples():
    orth = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    assert rcdr.rc_loss(orth, orth) == pytest.approx(0.0, abs=1e-9)
    corr = np.array([[1.0, 2.0], [-1.0, -2.0], [3.0, 6.0], [0.0, 0.0]])
    assert rcdr.rc_loss(corr, orth) == pytest.approx(2.0, abs=1e-9)
    x = np.random.default_rng(1).normal(size=(10, 4))
    assert rcdr.rc_loss(x, x) >= 0


def test_constant_column_is_guarded():
    # a constant column z-scores to zeros: its diagonal entry is 0 and it contributes exactly 1
    x = np.array([[1.0, 2.0], [-1.0, 2.0], [1.0, 2.0], [-1.0, 2.0]])
    c = rcdr.cross_correlation(rcdr.zscore_columns(x))
    assert c[1, 1] == 0.0 and c[0, 1] == 0.0
    orth = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    assert rcdr.rc_loss(x, orth) == pytest.approx(1.0, abs=1e-9)
    loss, g = rcdr._corr_penalty_and_grad(x, 1e-5)
    assert loss == pytest.approx(1.0, abs=1e-9) and np.all(np.isfinite(g))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rc_loss_invariances(seed):
    rng = np.random.default_rng(seed)
    z, v = rng.normal(size=(12, 4)), rng.normal(size=(9, 4))
    base = rcdr.rc_loss(z, v)
    perm = rng.permutation(12)
    assert abs(rcdr.rc_loss(z[perm], v) - base) < 1e-10
    scale, shift = rng.uniform(0.5, 3.0, size=4), rng.normal(size=4)
    # eps is negligible next to the column std, so rescaling is absorbed
    assert abs(rcdr.rc_loss(z * scale + shift, v, eps=0.0) - rcdr.rc_loss(z, v, eps=0.0)) < 1e-10


def test_corr_penalty_gradient_matches_finite_difference(rng):
    x = rng.normal(size=(7, 4))
    x[:, 3] = x[:, 0] * 0.9 + 0.1 * x[:, 3]

    def closure(p):
        loss, g = rcdr._corr_penalty_and_grad(p["x"], 1e-5)
        return loss, {"x": g}

    assert nn.grad_check({"x": x}, closure, eps=1e-6) < 1e-6


def test_total_loss_weights():
    comps = {"recon": 2.0, "pred": 0.5, "align": 3.0, "rc": 4.0}
    assert rcdr.total_loss(comps, 0.0, 0.0) == 2.5
    assert rcdr.total_loss(comps, 1.0, 0.5) == 7.5
    assert rcdr.total_loss(comps, 1.0, 0.5, w_recon=0.0, w_pred=2.0) == 6.0
    cfg = RcdrConfig()
    assert (cfg.lambda_A, cfg.lambda_R) == (1.0, 0.5)


# ---------------------------------------------------------------------------
# desk-scale objects: N_S = N_T = 30, N = 8 users, K = 16


@pytest.fixture(scope="module")
def desk():
    pair = raw_synthetic(
        SynthSpec(
            n_users=8, n_items_src=30, n_items_tgt=30, n_latent_clusters=2,
            positives_per_user_src=6, positives_per_user_tgt=6, noise_flip_prob=0.2,
        )
    )
    split = make_eval_split(pair, n_negatives=10, seed=0)
    scfg = sppg.SppgConfig(latent_dim=16, epochs=2, batch_size=4)
    _, pg, _ = sppg.train(pair, scfg)
    return pair, split, pg


def _jitter_biases(model, rng):
    for net in model.params.values():
        for k in net:
            if k.startswith("b"):
                net[k] = rng.normal(0, 0.1, net[k].shape)


@pytest.mark.parametrize("profiles", ["towers", "embeddings"])
@pytest.mark.parametrize("weights", [(1.0, 0.5, 1.0, 1.0), (3.0, 2.0, 0.5, 10.0)])
def test_full_objective_gradient(desk, rng, profiles, weights):
    pair, split, pg = desk
    lam_a, lam_r, w_recon, w_pred = weights
    cfg = RcdrConfig(latent_dim=16, profiles=profiles, lambda_A=lam_a, lambda_R=lam_r, w_recon=w_recon, w_pred=w_pred)
    model = rcdr.init_model(8, 30, 30, cfg)
    _jitter_biases(model, rng)
    rated = pair.target.matrix.toarray() > 0
    batch = rcdr.make_batch(model, pg, split.train.matrix, rated, np.arange(8), 2, np.random.default_rng(0))

    def closure(flat):
        params = {n: nn.unprefixed(n, flat) for n in rcdr.RcdrModel.NETS}
        total, _, grads = rcdr.batch_objective(model, batch, params)
        out = {}
        for n in rcdr.RcdrModel.NETS:
            out.update(nn.prefixed(n, grads[n]))
        return total, out

    assert nn.grad_check(model.tensors(), closure, n_coords=600) < 1e-4


def test_batch_negatives_are_unrated(desk):
    pair, split, pg = desk
    model = rcdr.init_model(8, 30, 30, RcdrConfig(latent_dim=16))
    rated = pair.target.matrix.toarray() > 0
    b = rcdr.make_batch(model, pg, split.train.matrix, rated, np.arange(8), 4, np.random.default_rng(3))
    u, j, y = b.triples[:, 0].astype(int), b.items[b.triples[:, 1].astype(int)], b.triples[:, 2]
    assert not rated[b.users[u[y == 0]], j[y == 0]].any()
    assert (y == 0).sum() == 4 * (y == 1).sum() == 4 * split.train.matrix.nnz
    assert b.src_rows.shape == (8, 30) and b.user_input.shape == (8, 30)


def test_source_profiles_and_mismatch(desk):
    _, _, pg = desk
    model = rcdr.init_model(8, 30, 30, RcdrConfig(latent_dim=16))
    rows, z = rcdr.sample_source_profiles(pg, model.specs["encoder"], model.encoder, [0, 1, 2])
    assert z.shape == (3, 16)
    _, z2 = rcdr.sample_source_profiles(pg, model.specs["encoder"], model.encoder, [0, 1, 2])
    assert np.array_equal(z, z2)
    bad = rcdr.init_model(8, 31, 30, RcdrConfig(latent_dim=16))
    with pytest.raises(ValueError):
        rcdr.sample_source_profiles(pg, bad.specs["encoder"], bad.encoder, [0])


def test_training_keeps_generator_frozen_and_is_deterministic(small_pair, tmp_path):
    pair, split = small_pair
    _, pg, _ = sppg.train(pair, sppg.SppgConfig(epochs=2, latent_dim=8))
    before = {k: v.copy() for k, v in pg.params.items()}
    cfg = RcdrConfig(epochs=3, latent_dim=8, patience=2)
    m1, h1, rep = rcdr.train_target(pair, split, pg, cfg)
    m2, _, _ = rcdr.train_target(pair, split, pg, cfg)
    assert all(np.array_equal(before[k], pg.params[k]) for k in before)
    m1.save(tmp_path / "a.ppgc")
    m2.save(tmp_path / "b.ppgc")
    assert (tmp_path / "a.ppgc").read_bytes() == (tmp_path / "b.ppgc").read_bytes()
    assert rep is not None and 0 <= rep["HR@10"] <= 1
    assert len(h1) == 3 and set(h1[0]) >= {"recon", "pred", "align", "rc", "total"}
    back = rcdr.RcdrModel.load(tmp_path / "a.ppgc")
    assert back.meta() == m1.meta()
    assert rcdr.evaluate(back, split).flat() == rcdr.evaluate(m1, split).flat()


def test_evaluate_is_read_only(small_pair):
    pair, split = small_pair
    model = rcdr.init_model(pair.n_users, pair.source.n_items, pair.target.n_items, RcdrConfig(latent_dim=8))
    before = copy.deepcopy(model.tensors())
    rcdr.evaluate(model, split, "val")
    after = model.tensors()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_generator_must_match_domain(small_pair, desk):
    pair, split = small_pair
    _, _, pg = desk
    with pytest.raises(ValueError):
        rcdr.train_target(pair, split, pg, RcdrConfig(epochs=1, latent_dim=16))


def test_huge_alignment_weight_collapses_profiles(small_pair):
    pair, split = small_pair
    _, pg, _ = sppg.train(pair, sppg.SppgConfig(epochs=2, latent_dim=8))
    _, hist, _ = rcdr.train_target(pair, split, pg, RcdrConfig(epochs=60, latent_dim=8, lambda_A=1e6, patience=None))
    assert hist[-1]["align"] < 1e-3 * hist[0]["align"]


def test_bce_alone_decreases_under_adam():
    rng = np.random.default_rng(0)
    z0, v0 = rng.normal(size=(6, 3)) * 0.1, rng.normal(size=(5, 3)) * 0.1
    triples = np.array([[u, j, float((u + j) % 2)] for u in range(6) for j in range(5)])
    u, j, y = triples[:, 0].astype(int), triples[:, 1].astype(int), triples[:, 2]
    params, state = {"z": z0, "v": v0}, None
    first = rcdr.predict_and_bce(z0, v0, triples)
    for _ in range(200):
        _, dlogit = rcdr._bce_parts(np.sum(params["z"][u] * params["v"][j], axis=1), y)
        gz, gv = np.zeros_like(z0), np.zeros_like(v0)
        np.add.at(gz, u, dlogit[:, None] * params["v"][j])
        np.add.at(gv, j, dlogit[:, None] * params["z"][u])
        params, state = nn.adam_step(params, {"z": gz, "v": gv}, state, 0.05)
    assert rcdr.predict_and_bce(params["z"], params["v"], triples) < first


def test_loss_csv(small_pair, tmp_path):
    pair, split = small_pair
    _, pg, _ = sppg.train(pair, sppg.SppgConfig(epochs=1, latent_dim=8))
    _, hist, _ = rcdr.train_target(pair, split, pg, RcdrConfig(epochs=2, latent_dim=8, patience=None))
    rcdr.write_losses(tmp_path / "l.csv", hist)
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "step,recon,pred,align,rc,total"


def test_config_validation():
    for kw in ({"profiles": "ids"}, {"lambda_A": -1}, {"batch_size": 1}, {"patience": 0}, {"min_epochs": -1}):
        with pytest.raises(ValueError):
            RcdrConfig(**kw)
