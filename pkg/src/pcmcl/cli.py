"""Command-line runner: ``pcmcl {synth,ingest,train,eval,report}``.

Every command resolves one RunConfig (config file, then ``--set`` overrides,
then dedicated flags), writes it to ``config.json`` in its run directory and
can be re-run from that snapshot with ``--config``.  Log verbosity comes from
the ``PCMCL_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .augment import build_augmented_dataset, pad_or_crop, write_augmentation_manifest
from .config import ConfigError, RunConfig, load_config
from .evaluation import (AP_CLASSES, METRICS, EvalReport, aggregate_runs, export_embeddings, format_report,
                         icbhi_metrics, pr_curve_and_ap, predict_cycles, read_metrics_csv, write_aggregate_csv,
                         write_metrics_csv, write_pr_csv, write_pr_svg, write_predictions)
from .features import mel_spectrogram, write_feature_cache
from .ingest import (IngestError, check_patient_disjoint, load_icbhi_dir, split_cycles, synth_generate,
                     write_icbhi_dir, write_manifest)
from .labels import format_label
from .model import load_model, save_model
from .training import TrainingDivergedError, train, write_train_log

logger = logging.getLogger("pcmcl")

CONFIG_NAME = "config.json"
CHECKPOINT_NAME = "model.ckpt"


def _run_dir(out: str | None, seed: int, command: str) -> Path:
    if out:
        path = Path(out)
    else:
        path = Path("runs") / f"{time.strftime('%Y%m%d-%H%M%S')}_{command}_seed{seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_snapshot(cfg: RunConfig, run_dir: Path) -> None:
    (run_dir / CONFIG_NAME).write_text(cfg.to_json())


def _replace(cfg: RunConfig, section: str, **changes) -> RunConfig:
    changes = {k: v for k, v in changes.items() if v is not None}
    if not changes:
        return cfg
    try:
        return dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), **changes)})
    except ValueError as exc:
        raise ConfigError(f"invalid {section} config: {exc}") from None


def _load_cycles(cfg: RunConfig):
    root = Path(cfg.paths.data_dir)
    if not root.is_dir():
        raise IngestError(f"data directory {root} does not exist")
    cycles = load_icbhi_dir(root, cfg.paths.split_file)
    check_patient_disjoint(cycles)
    return cycles


# --------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, args) -> int:
    cfg = _replace(cfg, "synth", seed=args.seed)
    run_dir = _run_dir(args.out, cfg.synth.seed, "synth")
    cycles = synth_generate(cfg.synth)
    write_icbhi_dir(cycles, run_dir / "data")
    _write_snapshot(cfg, run_dir)
    train_c, test_c = split_cycles(cycles)
    print(f"wrote {len(cycles)} cycles ({len(train_c)} train, {len(test_c)} test) to {run_dir / 'data'}")
    return 0


def cmd_ingest(cfg: RunConfig, args) -> int:
    cfg = _replace(cfg, "paths", data_dir=args.data)
    cycles = _load_cycles(cfg)
    run_dir = _run_dir(args.out, cfg.synth.seed, "ingest")
    write_manifest(cycles, run_dir / "manifest.csv")
    if args.cache_features:
        feat_dir = run_dir / "features"
        feat_dir.mkdir(exist_ok=True)
        for c in cycles:
            spec = mel_spectrogram(pad_or_crop(c.samples, cfg.train.target_len))
            write_feature_cache(feat_dir / f"{c.cycle_id.replace(':', '_')}.melf", spec)
    _write_snapshot(cfg, run_dir)
    counts: dict[tuple[str, str], int] = {}
    for c in cycles:
        key = (c.split or "-", format_label(c.label))
        counts[key] = counts.get(key, 0) + 1
    print(f"ingested {len(cycles)} cycles from {cfg.paths.data_dir}")
    for (split, label), n in sorted(counts.items()):
        print(f"  {split:<6} {label:<16} {n}")
    return 0


def _arm_flags(cfg: RunConfig, args) -> RunConfig:
    label_mode = None if args.multi is None else ("three" if args.multi else "two")
    cfg = _replace(cfg, "train", concat_enabled=args.concat, label_mode=label_mode, aux_enabled=args.pm,
                   epochs=args.epochs, alpha=args.alpha)
    cfg = _replace(cfg, "pairs", strategy=args.aux)
    if args.seed is not None:
        cfg = cfg.with_training_seed(args.seed)
    return cfg


def _train_one(cfg: RunConfig, train_cycles):
    return train(train_cycles, cfg.train, augment=cfg.augment, pairs=cfg.pairs)


def cmd_train(cfg: RunConfig, args) -> int:
    cfg = _replace(cfg, "paths", data_dir=args.data)
    cfg = _arm_flags(cfg, args)
    train_cycles, _ = split_cycles(_load_cycles(cfg))
    if not train_cycles:
        raise IngestError("no training-split cycles in the dataset")
    run_dir = _run_dir(args.out, cfg.train.seed, "train")
    _write_snapshot(cfg, run_dir)
    result = _train_one(cfg, train_cycles)
    save_model(run_dir / CHECKPOINT_NAME, result.model, {"train": cfg.to_dict()["train"]})
    write_train_log(result.log, run_dir / "train_log.csv")
    if cfg.train.concat_enabled and not cfg.train.aux_enabled:
        write_augmentation_manifest(build_augmented_dataset(train_cycles, cfg.augment, 0),
                                    run_dir / "pairs_epoch1.csv")
    print(f"trained {cfg.train.epochs} epochs: L_total {result.initial_loss:.4f} -> {result.final_loss:.4f}")
    print(f"checkpoint: {run_dir / CHECKPOINT_NAME}")
    return 0


def _eval_config(args) -> RunConfig:
    """Config for eval: an explicit --config, else the snapshot beside the checkpoint."""
    path = args.config
    if path is None and args.checkpoint:
        beside = Path(args.checkpoint).parent / CONFIG_NAME
        if beside.exists():
            path = str(beside)
    return load_config(path, args.set)


def cmd_eval(cfg: RunConfig, args) -> int:
    cfg = _replace(cfg, "paths", data_dir=args.data, checkpoint=args.checkpoint)
    cfg = _replace(cfg, "eval", runs=args.runs, export_embeddings=args.export_embeddings, svg=args.svg)
    if cfg.paths.checkpoint is None:
        raise ConfigError("paths.checkpoint is required for eval (use --checkpoint)")
    model, extra = load_model(cfg.paths.checkpoint)
    ckpt_seed = extra.get("train", {}).get("seed", cfg.train.seed)
    cycles = _load_cycles(cfg)
    train_cycles, test_cycles = split_cycles(cycles)
    if not test_cycles:
        raise IngestError("no test-split cycles in the dataset")
    run_dir = _run_dir(args.out, cfg.train.seed, "eval")
    _write_snapshot(cfg, run_dir)

    # run 0 is the given checkpoint; runs 1..k-1 retrain with seeds seed+1..seed+k-1
    reports: list[tuple[str, EvalReport]] = []
    records = predict_cycles(model, test_cycles)
    reports.append((f"seed{ckpt_seed}", icbhi_metrics(records)))
    for k in range(1, cfg.eval.runs):
        seed = ckpt_seed + k
        logger.info("retraining with seed %d", seed)
        retrained = _train_one(cfg.with_training_seed(seed), train_cycles).model
        reports.append((f"seed{seed}", icbhi_metrics(predict_cycles(retrained, test_cycles))))

    first = reports[0][1]
    write_predictions(records, run_dir / "predictions.csv")
    write_metrics_csv(reports, run_dir / "metrics.csv")
    agg = aggregate_runs([r for _, r in reports]) if len(reports) > 1 else None
    if agg:
        write_aggregate_csv(agg, run_dir / "aggregate.csv")
    (run_dir / "report.txt").write_text(format_report(first, agg))
    curves = {}
    for cls in AP_CLASSES:
        if first.ap[cls] is None:
            continue
        curves[cls] = pr_curve_and_ap(records, cls)
        write_pr_csv(curves[cls], run_dir / f"pr_{cls}.csv")
    if cfg.eval.svg and curves:
        write_pr_svg(curves, run_dir / "pr.svg")
    if cfg.eval.export_embeddings:
        samples = build_augmented_dataset(test_cycles, cfg.augment, 0)
        export_embeddings(model, samples, run_dir / "embeddings.csv")
    sys.stdout.write(format_report(first, agg))
    print(f"outputs: {run_dir}")
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    """Summarise eval run directories side by side (one line per directory)."""
    rows = []
    for d in args.runs_dirs:
        path = Path(d) / "metrics.csv"
        if not path.exists():
            raise IngestError(f"{path} not found (is {d} an eval run directory?)")
        rows.append((Path(d).name, read_metrics_csv(path)))
    lines = [f"{'run':<32} {'n':>3} " + " ".join(f"{m:>18}" for m in METRICS)]
    for name, metrics in rows:
        cells = []
        for m in METRICS:
            vals = [r[m] for r in metrics]
            if any(v is None for v in vals):
                cells.append("undefined")
            elif len(vals) == 1:
                cells.append(f"{vals[0]:.4f}")
            else:
                mean = sum(vals) / len(vals)
                std = (sum((v - mean) ** 2 for v in vals) / (len(vals) - 1)) ** 0.5
                cells.append(f"{mean:.4f}±{std:.4f}")
        lines.append(f"{name:<32} {len(metrics):>3} " + " ".join(f"{c:>18}" for c in cells))
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.txt").write_text(text)
        (out / "sources.json").write_text(json.dumps(sorted(str(d) for d in args.runs_dirs), indent=2) + "\n")
    sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcmcl", description="Respiratory-sound classification runner.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config (e.g. a config.json snapshot)")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value; may be repeated")
        p.add_argument("--out", help="run directory (default: runs/<timestamp>_<command>_seed<seed>)")

    p = sub.add_parser("synth", help="generate a synthetic dataset in ICBHI layout")
    common(p)
    p.add_argument("--seed", type=int, help="synth.seed")

    p = sub.add_parser("ingest", help="parse a dataset directory and write its manifest")
    common(p)
    p.add_argument("--data", help="paths.data_dir")
    p.add_argument("--cache-features", action="store_true", help="also write per-cycle log-mel caches")

    for name, helptext in (("train", "train one model"), ("eval", "evaluate a checkpoint on the test split")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--data", help="paths.data_dir")
        if name == "train":
            p.add_argument("--seed", type=int, help="training seed (init, pairing, shuffling)")
            p.add_argument("--concat", action=argparse.BooleanOptionalAction, default=None,
                           help="train on two-cycle concatenations")
            p.add_argument("--multi", action=argparse.BooleanOptionalAction, default=None,
                           help="3-label [normal, crackle, wheeze] targets (else 2-label)")
            p.add_argument("--pm", action=argparse.BooleanOptionalAction, default=None,
                           help="patient-matching auxiliary task")
            p.add_argument("--aux", choices=("base", "hard"), help="negative sampling for the auxiliary task")
            p.add_argument("--epochs", type=int)
            p.add_argument("--alpha", type=float)
        else:
            p.add_argument("--checkpoint", help="paths.checkpoint")
            p.add_argument("--runs", type=int, help="number of seeds (retrains seed+1..seed+k-1)")
            p.add_argument("--export-embeddings", action="store_true", default=None,
                           help="write embeddings.csv for augmented test pairs")
            p.add_argument("--svg", action=argparse.BooleanOptionalAction, default=None, help="write pr.svg")

    p = sub.add_parser("report", help="summarise eval run directories")
    p.add_argument("runs_dirs", nargs="+", metavar="RUN_DIR")
    p.add_argument("--out", help="directory for summary.txt")
    return parser


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "train": cmd_train, "eval": cmd_eval, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("PCMCL_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            cfg = RunConfig()
        elif args.command == "eval":
            cfg = _eval_config(args)
        else:
            cfg = load_config(args.config, args.set)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IngestError, TrainingDivergedError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
