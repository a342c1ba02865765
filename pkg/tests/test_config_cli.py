import csv
import json

import numpy as np
import pytest

from dpcdr import cli, pipeline
from dpcdr.config import ConfigError, RunConfig, dump_toml, from_flat, load_config, parse_overrides

SMALL = """\
seed = 3
[synth]
n_users = 120
n_items_src = 200
n_items_tgt = 120
positives_per_user_tgt = 8
[sppg]
epochs = 4
latent_dim = 8
batch_size = 32
[privacy]
sigma_p = 1.0
[rcdr]
epochs = 3
latent_dim = 8
batch_size = 32
"""


@pytest.fixture
def small_toml(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


def test_defaults():
    cfg = RunConfig()
    assert cfg.sppg.batch_size == 128 and cfg.sppg.clip_B == 1.0 and cfg.sppg.tau == 2.0
    assert cfg.rcdr.latent_dim == cfg.sppg.latent_dim == 200
    assert (cfg.rcdr.lambda_A, cfg.rcdr.lambda_R, cfg.rcdr.lr) == (1.0, 0.5, 0.01)
    assert cfg.eval_ks == (5, 10)


def test_tables_and_dotted_keys_agree(tmp_path, small_toml):
    dotted = tmp_path / "d.toml"
    dotted.write_text("seed = 3\nsynth.n_users = 120\nsynth.n_items_tgt = 120\nsppg.epochs = 4\nsppg.latent_dim = 8\n"
                      "sppg.batch_size = 32\nprivacy.sigma_p = 1.0\nrcdr.epochs = 3\nrcdr.latent_dim = 8\nrcdr.batch_size = 32\n")
    assert load_config(dotted) == load_config(small_toml)


def test_seed_propagates(small_toml):
    cfg = load_config(small_toml)
    assert cfg.synth.seed == cfg.sppg.seed == cfg.rcdr.seed == 3


def test_dump_roundtrip_and_hash(tmp_path, small_toml):
    cfg = load_config(small_toml, {"rcdr.patience": "none", "sppg.noise_dim": "32"})
    assert cfg.rcdr.patience is None and cfg.sppg.noise_dim == 32
    out = tmp_path / "out.toml"
    out.write_text(dump_toml(cfg))
    back = load_config(out)
    assert back == cfg and back.config_hash() == cfg.config_hash()
    assert len(cfg.run_id) == 12 and cfg.config_hash().startswith(cfg.run_id)
    assert cfg.with_values({"sppg.tau": 0.0}).config_hash() != cfg.config_hash()


def test_overrides_and_errors(small_toml):
    assert parse_overrides(["a.b=1", "c = x"]) == {"a.b": "1", "c": "x"}
    with pytest.raises(ConfigError):
        parse_overrides(["novalue"])
    for bad in ({"sppg.bogus": 1}, {"nope.x": 1}, {"sppg.sigma_p": 1.0}, {"rcdr.epochs": "many"},
                {"rcdr.epochs": 1.5}, {"eval.ks": "[0]"}, {"privacy.clip_B": 2.0}, {"rcdr.seed": 1}):
        with pytest.raises(ConfigError):
            load_config(small_toml, bad)
    with pytest.raises(ConfigError):
        load_config("/nonexistent.toml")


def test_bool_and_list_coercion():
    cfg = from_flat({"privacy.amplified": "yes", "privacy.alpha_grid": "[2, 4, 8]", "eval.ks": "5,10,20"})
    assert cfg.sppg.amplified is True and cfg.sppg.alpha_grid == (2.0, 4.0, 8.0) and cfg.eval_ks == (5, 10, 20)


def test_ablation_variants_differ_in_one_component():
    cfg = RunConfig()
    v = pipeline.ablation_configs(cfg)
    assert v["-GS"].sppg.tau == 0.0 and v["-GS"].rcdr == cfg.rcdr
    assert v["-RC"].rcdr.lambda_R == 0.0 and v["-RC"].sppg == cfg.sppg
    assert v["-SPP"].sppg.whole_model and v["-SPP"].synth == cfg.synth
    assert len({c.run_id for c in v.values()}) == 4


# ---------------------------------------------------------------------------
# CLI


def test_accountant_cli(capsys):
    assert cli.main(["accountant", "--sigma", "1", "--batch-size", "128", "--users", "300", "--steps", "1", "--alphas", "2"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["per_alpha"]["2"]["rdp"] == 512.0 and rep["best_alpha"] == 2.0
    assert set(rep) >= {"epsilon", "delta", "best_alpha", "per_alpha"}


def test_accountant_rejects_bad_clip(capsys):
    assert cli.main(["accountant", "--sigma", "1", "--clip", "2", "--users", "10", "--steps", "1"]) == 2
    assert "error" in capsys.readouterr().err


def test_dirac_cli(tmp_path, capsys):
    assert cli.main(["dirac", "--tau", "2", "--t-max", "1", "--h", "0.01", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "poles.json").read_text())
    assert rep["classification"] == "stable" and rep["poles"] == [[-1.0, 0.0], [-1.0, 0.0]]
    rows = list(csv.reader(open(tmp_path / "trajectory.csv")))
    assert rows[0] == ["t", "theta_D", "theta_G", "V"] and len(rows) == 102
    capsys.readouterr()


def test_dirac_blow_up_exits_numeric(tmp_path, capsys):
    assert cli.main(["dirac", "--t-max", "2000", "--h", "5", "--out", str(tmp_path)]) == 3
    assert "numeric" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["synth", "--set", "synth.bogus=1", "--out", str(tmp_path)]) == 2
    assert cli.main(["synth", "--set", "synth.n_items_tgt=10", "--out", str(tmp_path)]) == 2
    capsys.readouterr()


def test_train_target_without_generator(tmp_path, small_toml, capsys):
    data = tmp_path / "data"
    assert cli.main(["synth", "--config", str(small_toml), "--out", str(data)]) == 0
    code = cli.main(["train-target", "--config", str(small_toml), "--data", str(data),
                     "--generator", str(tmp_path / "missing.ppgc"), "--out", str(tmp_path / "t")])
    assert code == 2 and "train-source" in capsys.readouterr().err


def test_stagewise_cli(tmp_path, small_toml, capsys):
    data, src, tgt = tmp_path / "data", tmp_path / "src", tmp_path / "tgt"
    base = ["--config", str(small_toml)]
    assert cli.main(["synth", *base, "--out", str(data)]) == 0
    assert cli.main(["train-source", *base, "--data", str(data), "--out", str(src)]) == 0
    assert (src / "generator.ppgc").exists() and (src / "generator.json").exists()
    header = (src / "sppg_losses.csv").read_text().splitlines()[0]
    assert header == "step,L_G,L_D,L_GS,grad_norm_D"
    assert cli.main(["train-target", *base, "--data", str(data), "--generator", str(src / "generator.ppgc"), "--out", str(tgt)]) == 0
    results = tmp_path / "results.csv"
    for _ in range(2):
        assert cli.main(["evaluate", *base, "--data", str(data), "--model", str(tgt / "rcdr.ppgc"), "--results", str(results)]) == 0
    rows = list(csv.DictReader(open(results)))
    assert len(rows) == 2 and rows[0] == rows[1]
    assert list(rows[0])[:3] == ["run_id", "config_hash", "variant"]
    capsys.readouterr()


def test_run_is_deterministic(tmp_path, small_toml, capsys):
    outs = []
    for name in ("a", "b"):
        assert cli.main(["run", "--config", str(small_toml), "--out", str(tmp_path / name)]) == 0
        outs.append(json.loads(capsys.readouterr().out))
    run_id = outs[0]["run_id"]
    a, b = tmp_path / "a" / run_id, tmp_path / "b" / run_id
    for f in ("rcdr.ppgc", "generator.ppgc", "results.csv", "metrics.json", "config.toml"):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    assert outs[0]["budget"]["epsilon"] > 0 and np.isfinite(outs[0]["budget"]["epsilon"])
