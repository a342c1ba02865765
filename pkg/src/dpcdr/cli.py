"""Command-line entry point: ``dpcdr <subcommand> ...``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dataio, dirac, pipeline, privacy, rcdr, sppg
from .config import ConfigError, load_config, parse_overrides
from .synth import generate_synthetic

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("dpcdr")


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _config(args):
    overrides = parse_overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "data", None):
        overrides["data.prepared_dir"] = args.data
    return load_config(getattr(args, "config", None), overrides)


def _add_config_args(p, data=False):
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--seed", type=int)
    if data:
        p.add_argument("--data", required=True, help="directory written by 'prepare' or 'synth'")


def cmd_prepare(args) -> int:
    pair, split = dataio.prepare(args.source, args.target, args.threshold, args.min_interactions, args.negatives, args.seed)
    dataio.save_prepared(args.out, pair, split)
    _print_json({"users": pair.n_users, "source_items": pair.source.n_items, "target_items": pair.target.n_items, "out": args.out})
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _config(args)
    pair = generate_synthetic(cfg.synth, cfg.data.min_interactions)
    split = dataio.make_eval_split(pair, cfg.data.n_negatives, cfg.seed)
    dataio.save_prepared(args.out, pair, split)
    Path(args.out, "synth_spec.json").write_text(json.dumps(cfg.synth.to_dict(), indent=2, sort_keys=True) + "\n")
    _print_json({"users": pair.n_users, "source_items": pair.source.n_items, "target_items": pair.target.n_items, "out": args.out})
    return EXIT_OK


def cmd_train_source(args) -> int:
    cfg = _config(args)
    pair, _ = dataio.load_prepared(args.data)
    _, published, history = pipeline.train_source(pair, cfg, args.out)
    _print_json({"steps": len(history), "budget": published.final_budget, "generator": str(Path(args.out) / "generator.ppgc")})
    return EXIT_OK


def cmd_train_target(args) -> int:
    cfg = _config(args)
    gen_path = Path(args.generator)
    if not gen_path.exists():
        raise FileNotFoundError(f"generator not found: {gen_path} (run 'train-source' first)")
    published = sppg.PublishedGenerator.load(gen_path)
    pair, split = dataio.load_prepared(args.data)
    _, history = pipeline.train_target(pair, split, published, cfg, args.out)
    _print_json({"steps": len(history), "model": str(Path(args.out) / "rcdr.ppgc")})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    model = rcdr.RcdrModel.load(args.model)
    _, split = dataio.load_prepared(args.data)
    report = rcdr.evaluate(model, split, args.which, cfg.eval_ks)
    _print_json(report.to_dict())
    if args.results:
        pipeline.append_results(args.results, pipeline.results_row(cfg.run_id, cfg.config_hash(), report, args.variant))
    return EXIT_OK


def cmd_accountant(args) -> int:
    alphas = tuple(float(a) for a in args.alphas.split(",")) if args.alphas else privacy.DEFAULT_ALPHAS
    _print_json(
        privacy.account(args.sigma, args.clip, args.batch_size, args.users, args.steps, args.delta, alphas, args.amplified)
    )
    return EXIT_OK


def cmd_dirac(args) -> int:
    cfg = dirac.DiracConfig(
        c=args.c, phi=args.phi, sigma_gr=args.sigma_gr, tau=args.tau,
        theta_D0=args.theta_d0, theta_G0=args.theta_g0, t_max=args.t_max, h=args.h,
    )
    traj = dirac.simulate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out / "trajectory.csv")
    p = dirac.poles(args.tau)
    d, g = traj.final_state()
    report = {
        "tau": args.tau,
        "poles": [[z.real, z.imag] for z in p],
        "classification": dirac.stability_report(args.tau),
        "final": {"theta_D": float(d[0]), "theta_G": float(g[0]), "V": float(traj.V[-1])},
    }
    (out / "poles.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _print_json(report)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    res = pipeline.run_pipeline(cfg, args.out)
    _print_json({"run_id": cfg.run_id, "run_dir": str(res.run_dir), "metrics": res.report.to_dict(), "budget": res.budget})
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    results = pipeline.run_ablation(cfg, args.out)
    print(pipeline.format_table(results, cfg.eval_ks))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpcdr", description="Privacy-preserving cross-domain recommendation pipeline.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="binarize, filter and split two rating files")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=3.0)
    p.add_argument("--min-interactions", type=int, default=5)
    p.add_argument("--negatives", type=int, default=99)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="write a clustered synthetic domain pair")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-source", help="train and publish the source generator")
    _add_config_args(p, data=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_source)

    p = sub.add_parser("train-target", help="train the target recommender from a published generator")
    _add_config_args(p, data=True)
    p.add_argument("--generator", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_target)

    p = sub.add_parser("evaluate", help="leave-one-out metrics of a trained target model")
    _add_config_args(p, data=True)
    p.add_argument("--model", required=True)
    p.add_argument("--which", choices=("val", "test"), default="test")
    p.add_argument("--results", help="append a row to this CSV")
    p.add_argument("--variant", default="full")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("accountant", help="privacy budget of a training schedule")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--clip", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--delta", type=float, default=1e-5)
    p.add_argument("--alphas", help="comma-separated orders")
    p.add_argument("--amplified", action="store_true")
    p.set_defaults(func=cmd_accountant)

    p = sub.add_parser("dirac", help="simulate the one-parameter GAN dynamics")
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--c", type=float, default=0.0)
    p.add_argument("--phi", type=float, default=0.5)
    p.add_argument("--sigma-gr", type=float, default=0.0)
    p.add_argument("--theta-d0", type=float, default=0.0)
    p.add_argument("--theta-g0", type=float, default=1.0)
    p.add_argument("--t-max", type=float, default=20.0)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dirac)

    p = sub.add_parser("run", help="every stage of one configuration")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="root directory; the run goes in <out>/<run id>")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="full model against -GS, -RC and -SPP on shared seeds")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (sppg.NumericError, dirac.DiracError, FloatingPointError) as exc:
        print(f"dpcdr: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, dataio.DataError, privacy.PrivacyError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"dpcdr: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
