"""Command-line front end: simulate | train | evaluate | paramcheck | sweep | report."""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import itertools
import json
import logging
import os
import sys
from pathlib import Path

import torch

from seplab.config import ExperimentConfig, load_config
from seplab.errors import ConfigError, SeplabError
from seplab.evaluation import evaluate, read_records, write_records
from seplab.models import (
    ModelConfig,
    build_model,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
    table1_configs,
    table2_configs,
)
from seplab.plotting import emit_plots, write_csv
from seplab.report import (
    ENCODER_DECODER_HEADER,
    PUBLISHED_TABLE1,
    PUBLISHED_TABLE2,
    SIMO_SISO_HEADER,
    BucketTable,
    bucket_by_overlap,
    bucket_spread,
    csv_rows,
    render_table,
)
from seplab.scene.dataset import ManifestDataset, generate_dataset
from seplab.training import TrainLog, train

log = logging.getLogger("seplab")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class Context:
    def __init__(self, cfg: ExperimentConfig, workdir: Path, jobs: int, force: bool):
        self.cfg = cfg
        self.workdir = workdir
        self.jobs = jobs
        self.force = force

    @property
    def data_dir(self) -> Path:
        return self.workdir / self.cfg.dataset.out_dir

    @property
    def manifest(self) -> Path:
        if self.cfg.eval.manifest:
            return self.workdir / self.cfg.eval.manifest
        return self.data_dir / "manifest.jsonl"

    def run_dir(self, model_cfg: ModelConfig) -> Path:
        return self.workdir / "runs" / model_cfg.config_id

    @property
    def report_dir(self) -> Path:
        return self.workdir / self.cfg.eval.report_dir


def _stamp(cfg: ExperimentConfig, model_cfg: ModelConfig) -> str:
    payload = {"dataset": dataclasses.asdict(cfg.dataset), "model": model_cfg.to_dict(),
               "train": dataclasses.asdict(cfg.train), "seed": cfg.seed}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def cmd_simulate(ctx: Context) -> Path:
    manifest = generate_dataset(ctx.cfg.dataset, ctx.data_dir, jobs=ctx.jobs, force=ctx.force)
    print(manifest)
    return manifest


def _train_one(ctx: Context, model_cfg: ModelConfig) -> Path:
    run = ctx.run_dir(model_cfg)
    ckpt = run / "checkpoint.npz"
    stamp = _stamp(ctx.cfg, model_cfg)
    if ckpt.exists() and not ctx.force:
        _, extra = load_checkpoint(ckpt)
        if extra.get("stamp") == stamp:
            log.info("%s: checkpoint up to date, skipping training", model_cfg.config_id)
            return ckpt
    manifest = cmd_simulate(ctx) if not ctx.manifest.exists() else ctx.manifest
    train_set = ManifestDataset(manifest, "train")
    valid_set = ManifestDataset(manifest, "valid")
    if not len(train_set) or not len(valid_set):
        raise ConfigError("dataset: train and valid splits must be non-empty to train")
    model = build_model(model_cfg, seed=ctx.cfg.seed)
    log.info("%s: %d parameters", model_cfg.config_id, count_parameters(model))
    model, history = train(model, (train_set.mixtures, train_set.targets),
                           (valid_set.mixtures, valid_set.targets), ctx.cfg.train,
                           log_path=run / "train_log.jsonl")
    save_checkpoint(model, ckpt, extra={"stamp": stamp, "root_seed": ctx.cfg.seed,
                                        "best_epoch": history.best_epoch,
                                        "experiment": ctx.cfg.to_dict()})
    return ckpt


def cmd_train(ctx: Context) -> tuple[Path, Path]:
    ckpt = _train_one(ctx, ctx.cfg.model)
    log_path = ckpt.parent / "train_log.jsonl"
    print(ckpt)
    print(log_path)
    return ckpt, log_path


def _evaluate_one(ctx: Context, model_cfg: ModelConfig, checkpoint: Path | None = None):
    run = ctx.run_dir(model_cfg)
    checkpoint = checkpoint or run / "checkpoint.npz"
    if not checkpoint.exists():
        raise FileNotFoundError(f"no checkpoint at {checkpoint}; run train first")
    model, extra = load_checkpoint(checkpoint)
    cid = model.config.config_id
    records_path = ctx.run_dir(model.config) / "records.jsonl"
    meta_path = records_path.with_suffix(".meta.json")
    meta = {"checkpoint_stamp": extra.get("stamp"), "split": ctx.cfg.eval.split,
            "manifest": os.path.relpath(ctx.manifest, ctx.workdir), "root_seed": ctx.cfg.seed}
    if (records_path.exists() and meta_path.exists() and not ctx.force
            and json.loads(meta_path.read_text()) == meta):
        return model.config, read_records(records_path)
    records = evaluate(model, ctx.manifest, ctx.cfg.eval.split, config_id=cid, jobs=ctx.jobs)
    write_records(records, records_path)
    meta_path.write_text(json.dumps(meta, sort_keys=True))
    return model.config, records


def _row(model_cfg: ModelConfig, records):
    label = tuple(str(v) for v in model_cfg.split)
    return bucket_by_overlap(records, label=label, config_id=model_cfg.config_id)


def cmd_evaluate(ctx: Context, checkpoint: Path | None = None) -> BucketTable:
    model_cfg, records = _evaluate_one(ctx, ctx.cfg.model, checkpoint)
    header = ENCODER_DECODER_HEADER if model_cfg.design == "siso_iterative" else SIMO_SISO_HEADER
    table = BucketTable(header=header, rows=[_row(model_cfg, records)])
    print(render_table(table, "text", improvement=ctx.cfg.eval.improvement), end="")
    return table


def cmd_paramcheck(ctx: Context) -> dict:
    """Parameter counts of every table split and their largest pairwise relative difference."""
    base = ctx.cfg.model
    report = {}
    lines = []
    for name, configs in (("table1", table1_configs(base)), ("table2", table2_configs(base))):
        counts = {c.config_id: count_parameters(build_model(c, seed=0)) for c in configs}
        worst = max((abs(a - b) / max(a, b)
                     for a, b in itertools.combinations(counts.values(), 2)), default=0.0)
        report[name] = {"counts": counts, "max_pairwise_rel_diff": worst}
        lines.append(f"{name}:")
        lines += [f"  {cid:<28s} {n:>12,d}" for cid, n in counts.items()]
        lines.append(f"  max pairwise relative difference: {worst:.4%} "
                     f"({'PASS' if worst < 0.05 else 'FAIL'} < 5%)")
    every = [n for r in report.values() for n in r["counts"].values()]
    worst = max(abs(a - b) / max(a, b) for a, b in itertools.combinations(every, 2))
    report["all"] = {"max_pairwise_rel_diff": worst}
    lines.append(f"all splits: max pairwise relative difference {worst:.4%} "
                 f"({'PASS' if worst < 0.05 else 'FAIL'} < 5%)")
    print("\n".join(lines))
    return report


def _sweep_configs(ctx: Context) -> list[ModelConfig]:
    configs = []
    if 1 in ctx.cfg.sweep.tables:
        configs += table1_configs(ctx.cfg.model)
    if 2 in ctx.cfg.sweep.tables:
        configs += table2_configs(ctx.cfg.model)
    if ctx.cfg.sweep.include:
        wanted = set(ctx.cfg.sweep.include)
        configs = [c for c in configs if f"{c.design}:{c.K}" in wanted]
    return configs


def _tables(pairs) -> dict[str, BucketTable]:
    t1 = BucketTable(header=SIMO_SISO_HEADER, caption="SIMO-only and mixed SIMO-SISO")
    t2 = BucketTable(header=ENCODER_DECODER_HEADER, caption="iterative SISO-only")
    for model_cfg, records in pairs:
        target = t2 if model_cfg.design == "siso_iterative" else t1
        target.rows.append(_row(model_cfg, records))
    return {"table1": t1, "table2": t2}


def write_report(ctx: Context, pairs) -> dict[str, BucketTable]:
    out = ctx.report_dir
    out.mkdir(parents=True, exist_ok=True)
    tables = _tables(pairs)
    refs = {"table1": PUBLISHED_TABLE1, "table2": PUBLISHED_TABLE2}
    imp = ctx.cfg.eval.improvement
    for name, table in tables.items():
        if not table.rows:
            continue
        (out / f"{name}.md").write_text(render_table(table, "markdown", refs[name], imp))
        (out / f"{name}.txt").write_text(render_table(table, "text", refs[name], imp))
        print(render_table(table, "text", refs[name], imp))
        spread = bucket_spread(table)
        print("spread across configs (dB): " + ", ".join(
            f"{b}={'n/a' if s is None else f'{s:.2f}'}"
            for b, s in zip(["<25", "25-50", "50-75", ">75", "Average"], spread)))
    all_rows = [r for t in tables.values() for r in csv_rows(t)]
    write_csv(out / "buckets.csv", all_rows,
              ("config_id", "bucket", "n", "mean_si_sdr_db", "mean_improvement_db"))
    records = [r for _, recs in pairs for r in recs]
    emit_plots(records, out, {k: v for k, v in tables.items() if v.rows})
    (out / "report.json").write_text(json.dumps({"root_seed": ctx.cfg.seed,
                                                 "configs": [c.config_id for c, _ in pairs]},
                                                indent=2))
    return tables


def cmd_sweep(ctx: Context) -> dict[str, BucketTable]:
    pairs = []
    for model_cfg in _sweep_configs(ctx):
        log.info("sweep: %s", model_cfg.config_id)
        ckpt = _train_one(ctx, model_cfg)
        pairs.append(_evaluate_one(ctx, model_cfg, ckpt))
    return write_report(ctx, pairs)


def cmd_report(ctx: Context) -> dict[str, BucketTable]:
    """Rebuild tables and figures from every run directory that holds evaluation records."""
    known = {c.config_id: c for c in table1_configs(ctx.cfg.model) + table2_configs(ctx.cfg.model)}
    pairs = []
    for path in sorted((ctx.workdir / "runs").glob("*/records.jsonl")):
        ckpt = path.parent / "checkpoint.npz"
        model_cfg = load_checkpoint(ckpt)[0].config if ckpt.exists() else known.get(path.parent.name)
        if model_cfg is None:
            log.warning("skipping %s: unknown configuration", path)
            continue
        pairs.append((model_cfg, read_records(path)))
    order = list(known)
    pairs.sort(key=lambda p: order.index(p[0].config_id) if p[0].config_id in order else len(order))
    if not pairs:
        raise FileNotFoundError(f"no evaluation records under {ctx.workdir / 'runs'}")
    return write_report(ctx, pairs)


def _global_options(parser, defaults: bool) -> None:
    # subcommands repeat the global flags with suppressed defaults, so they may
    # appear on either side of the subcommand name
    def d(value):
        return value if defaults else argparse.SUPPRESS

    parser.add_argument("--config", "-c", type=Path, default=d(None), help="YAML experiment config")
    parser.add_argument("--workdir", "-w", type=Path, default=d(Path(".")),
                        help="root for every relative path (default: current directory)")
    parser.add_argument("--set", dest="overrides" if defaults else "late_overrides", action="append",
                        default=[] if defaults else argparse.SUPPRESS,
                        metavar="KEY=VALUE", help="override a config key, e.g. model.K=3")
    parser.add_argument("--jobs", "-j", type=int, default=d(1), help="worker count for simulate/evaluate")
    parser.add_argument("--force", action="store_true", default=d(False),
                        help="recompute existing artifacts")
    parser.add_argument("--verbose", "-v", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seplab", description=__doc__)
    _global_options(parser, defaults=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, defaults=False)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate the simulated dataset and manifest")
    sub.add_parser("train", parents=[common], help="train the model section's configuration")
    ev = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint on the eval split")
    ev.add_argument("--checkpoint", type=Path)
    sub.add_parser("paramcheck", parents=[common], help="parameter counts across every block split")
    sub.add_parser("sweep", parents=[common], help="train and evaluate every split, then report")
    sub.add_parser("report", parents=[common],
                   help="render tables and figures from existing evaluations")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.overrides += getattr(args, "late_overrides", [])
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    # intra-op threading changes float reduction order; workers parallelize instead
    torch.set_num_threads(1)
    try:
        config_path = args.config
        if config_path is not None and not config_path.is_absolute():
            config_path = config_path if config_path.exists() else args.workdir / config_path
        cfg = load_config(config_path, args.overrides)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        ctx = Context(cfg, args.workdir, args.jobs, args.force)
        if args.command == "simulate":
            cmd_simulate(ctx)
        elif args.command == "train":
            cmd_train(ctx)
        elif args.command == "evaluate":
            ckpt = args.checkpoint
            if ckpt is not None and not ckpt.is_absolute():
                ckpt = args.workdir / ckpt
            cmd_evaluate(ctx, ckpt)
        elif args.command == "paramcheck":
            cmd_paramcheck(ctx)
        elif args.command == "sweep":
            cmd_sweep(ctx)
        elif args.command == "report":
            cmd_report(ctx)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SeplabError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
