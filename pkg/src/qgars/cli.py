"""Command-line entry points.

Subcommands: gen-data, train, embed, classify, run, sweep, export. A config
file (JSON, see config.ExperimentConfig) drives everything; --profile picks
a named preset when no config is given, and --method/--seed-base/--out
override individual fields.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import classify as classify_mod
from . import pipeline, reduction, reservoir
from .config import ExperimentConfig, load_config, profile_config, save_config
from .data import generate_synthetic_polyps, save_dataset, split_train_test
from .nn import save_network


def _resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = profile_config(args.profile)
    raw = cfg.to_dict()
    if args.method:
        raw["method"] = args.method
    if args.out:
        raw["out_dir"] = args.out
    if args.seed_base is not None:
        raw["seeds"] = [args.seed_base + i for i in range(len(raw["seeds"]))]
    return ExperimentConfig.from_dict(raw)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment config file (JSON)")
    parser.add_argument("--profile", choices=["desk", "paper"], default="desk",
                        help="preset used when no --config is given")
    parser.add_argument("--method", choices=["pca", "ae", "qgars"])
    parser.add_argument("--seed-base", type=int, default=None,
                        help="rebase the seed list at this value")
    parser.add_argument("--out", help="output directory override")


def cmd_gen_data(args) -> int:
    ds = generate_synthetic_polyps(args.n, args.image_size, args.seed)
    save_dataset(args.out, ds)
    print(f"wrote {len(ds)} samples to {args.out}.{{images,labels}}.bin")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(out / "resolved_config.json", cfg)
    full = pipeline.load_full_dataset(cfg)
    seed = cfg.seeds[0]
    train, test = split_train_test(full, cfg.dataset.n_train, cfg.dataset.n_test, seed)
    seed_dir = out / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    _, _, traces, query_log, model = pipeline._reduce_features(cfg, train, test, seed, seed_dir)
    if traces is not None:
        pipeline._write_loss_trace(seed_dir / "loss_trace.csv", traces)
    if query_log:
        with open(seed_dir / "query_log.jsonl", "w") as fh:
            for rec in query_log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"trained {cfg.method} reduction for seed {seed}; artifacts in {seed_dir}")
    return 0


def cmd_embed(args) -> int:
    cfg = _resolve_config(args)
    for split in ("train", "test"):
        path = pipeline.export_embeddings(cfg, split, Path(cfg.out_dir) / f"embeddings_{split}.csv")
        print(f"wrote {path}")
    return 0


def cmd_classify(args) -> int:
    cfg = _resolve_config(args)
    report = pipeline.run_experiment(cfg)
    for name, rep in report["classifiers"].items():
        std = rep["std"]
        spread = f" +/- {std:.2f}" if std is not None else ""
        print(f"{rep['method']}: {rep['mean']:.2f}{spread}")
    return 0


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    report = pipeline.run_experiment(cfg)
    print(json.dumps(report["classifiers"], sort_keys=True, indent=2))
    print(f"report: {Path(cfg.out_dir) / 'report.json'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    values = [float(v) for v in args.values.split(",") if v.strip()]
    if not values:
        print("no sweep values given", file=sys.stderr)
        return 2
    rows = pipeline.run_sweep(cfg, args.axis, values)
    for row in rows:
        if row["error"]:
            print(f"{args.axis}={row['value']:g}: FAILED ({row['error']})")
        else:
            print(
                f"{args.axis}={row['value']:g} [{row['classifier']}]: "
                f"{row['mean']:.2f} +/- {row['std']:.2f}"
            )
    print(f"sweep table: {Path(cfg.out_dir) / 'sweep.csv'}")
    return 0


def cmd_export(args) -> int:
    cfg = _resolve_config(args)
    path = pipeline.export_embeddings(cfg, args.split)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qgars", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic polyp dataset")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--out", required=True, help="cache prefix to write")
    p.set_defaults(fn=cmd_gen_data)

    for name, fn, extra_help in [
        ("train", cmd_train, "fit the reduction stage and save checkpoints"),
        ("embed", cmd_embed, "compute and export reservoir embeddings"),
        ("classify", cmd_classify, "train/evaluate classifiers end to end"),
        ("run", cmd_run, "full multi-seed experiment"),
    ]:
        p = sub.add_parser(name, help=extra_help)
        _add_common(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("sweep", help="sweep one hyperparameter axis")
    _add_common(p)
    p.add_argument("--axis", choices=list(pipeline.SWEEP_AXES), required=True)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("export", help="export embeddings for external projection")
    _add_common(p)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.set_defaults(fn=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
