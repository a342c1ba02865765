"""End-to-end runs: data, source generator, target model, evaluation."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from . import dataio, rcdr, sppg
from .config import RunConfig, dump_toml, with_variant
from .evaluation import MetricsReport
from .synth import generate_synthetic

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("HR@5", "NDCG@5", "MRR@5", "HR@10", "NDCG@10", "MRR@10")


def load_data(cfg: RunConfig):
    """``(pair, split)`` from prepared files, raw rating files or the synthetic spec."""
    d = cfg.data
    if d.prepared_dir:
        return dataio.load_prepared(d.prepared_dir)
    if d.source_path or d.target_path:
        if not (d.source_path and d.target_path):
            raise dataio.DataError("both data.source_path and data.target_path are required")
        return dataio.prepare(d.source_path, d.target_path, d.threshold, d.min_interactions, d.n_negatives, cfg.seed)
    pair = generate_synthetic(cfg.synth, d.min_interactions)
    return pair, dataio.make_eval_split(pair, d.n_negatives, cfg.seed)


def train_source(pair, cfg: RunConfig, out_dir=None):
    model, published, history = sppg.train(pair, cfg.sppg)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        published.save(out / "generator.ppgc")
        sppg.write_losses(out / "sppg_losses.csv", history)
    return model, published, history


def train_target(pair, split, published, cfg: RunConfig, out_dir=None):
    model, history, _ = rcdr.train_target(pair, split, published, cfg.rcdr)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        model.save(out / "rcdr.ppgc")
        rcdr.write_losses(out / "rcdr_losses.csv", history)
    return model, history


def results_row(run_id: str, config_hash: str, report: MetricsReport, variant: str = "full") -> dict:
    flat = report.flat()
    return {"run_id": run_id, "config_hash": config_hash, "variant": variant, **{k: repr(flat[k]) for k in METRIC_COLUMNS}}


def append_results(path, row: dict) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        if new:
            w.writeheader()
        w.writerow(row)


@dataclass
class RunResult:
    run_dir: Path
    report: MetricsReport
    budget: dict
    row: dict


def run_pipeline(cfg: RunConfig, out_root, variant: str = "full") -> RunResult:
    """Every stage of one configuration, written under ``out_root/<run id>``."""
    run_dir = Path(out_root) / cfg.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.toml").write_text(dump_toml(cfg))
    pair, split = load_data(cfg)
    dataio.save_prepared(run_dir / "data", pair, split)
    log.info("run %s: %d users, %d source items, %d target items", cfg.run_id, pair.n_users, pair.source.n_items, pair.target.n_items)
    _, published, _ = train_source(pair, cfg, run_dir)
    if variant == "target-only":
        published = sppg.PublishedGenerator.zeros_like(published)
    model, _ = train_target(pair, split, published, cfg, run_dir)
    report = rcdr.evaluate(model, split, "test", cfg.eval_ks)
    (run_dir / "metrics.json").write_text(
        json.dumps({"metrics": report.to_dict(), "budget": published.final_budget}, indent=2, sort_keys=True) + "\n"
    )
    row = results_row(cfg.run_id, cfg.config_hash(), report, variant)
    results = run_dir / "results.csv"
    if results.exists():
        results.unlink()
    append_results(results, row)
    return RunResult(run_dir, report, published.final_budget, row)


ABLATIONS = ("full", "-GS", "-RC", "-SPP")


def ablation_configs(cfg: RunConfig) -> dict:
    """Variants sharing every seed; each differs from ``full`` in one component."""
    return {
        "full": cfg,
        "-GS": with_variant(cfg, sppg={"tau": 0.0}),
        "-RC": with_variant(cfg, rcdr={"lambda_R": 0.0}),
        "-SPP": with_variant(cfg, sppg={"whole_model": True}),
    }


def run_ablation(cfg: RunConfig, out_root) -> dict:
    out_root = Path(out_root)
    results = {}
    for name, vcfg in ablation_configs(cfg).items():
        results[name] = run_pipeline(vcfg, out_root, name)
    table = out_root / "ablation.csv"
    if table.exists():
        table.unlink()
    for res in results.values():
        append_results(table, res.row)
    return results


def format_table(results: dict, ks=(5, 10)) -> str:
    cols = [f"{m}@{k}" for k in ks for m in ("HR", "NDCG", "MRR")]
    lines = ["variant  " + "  ".join(f"{c:>8}" for c in cols)]
    for name, res in results.items():
        flat = res.report.flat()
        lines.append(f"{name:<8} " + "  ".join(f"{flat[c]:8.4f}" for c in cols))
    return "\n".join(lines)
