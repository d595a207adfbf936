"""Operator surface: dataset synthesis, training, K-fold runs, prediction,
evaluation, and the head-count sweep.

Config resolution order is flags > config file > defaults; every command
echoes the fully resolved config (stdout and resolved_config.json) so a rerun
from the echo reproduces its outputs bit-for-bit. Exit codes: 1 config
errors, 2 data errors, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .dataio import SyntheticSpec, gen_synthetic, load_dataset
from .errors import ConfigError, DataError, MmregError, NumericError
from .evaluator import DIMENSIONS, emit_report, evaluate, render_table
from .model import predict_records
from .sweeps import head_sweep_csv, pooling_matrix_table, run_pooling_matrix, \
    sweep_head_counts
from .trainer import load_checkpoint, save_checkpoint, train_kfold, train_on_dataset

ENV_OUTPUT_DIR = "MMREG_OUTPUT_DIR"

_SCALAR_FLAGS = {
    "lr": float,
    "batch_size": int,
    "max_epochs": int,
    "kfold": int,
    "seed": int,
    "head_count": int,
    "hidden_dim": int,
    "basis_count": int,
    "shared_dim": int,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "weight_decay": float,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors (exit 1)
        raise ConfigError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file mirroring the training config")
    for name, typ in _SCALAR_FLAGS.items():
        flags = [f"--{name.replace('_', '-')}"]
        if name == "kfold":
            flags.append("--k")
        p.add_argument(*flags, type=typ, default=None)
    p.add_argument("--early-stop-patience", default=None,
                   help="epochs without val improvement before stopping; 'none' disables")
    p.add_argument("--train-mse-target", type=float, default=None)
    p.add_argument("--pooling-video", choices=("max", "mean"), default=None)
    p.add_argument("--pooling-audio", choices=("max", "mean"), default=None)
    for rate in ("temporal", "text", "adapter", "head"):
        p.add_argument(f"--dropout-{rate}", type=float, default=None)
    p.add_argument("--clamp-at-inference", choices=("true", "false"), default=None)


def _resolve_config(args) -> tuple[TrainConfig, dict]:
    """defaults < file < flags; returns the config plus path keys from the file."""
    cfg = TrainConfig()
    paths: dict = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        for key in ("manifest", "output_dir"):
            if key in doc:
                paths[key] = doc.pop(key)
        cfg = cfg.with_overrides(doc)
    overrides: dict = {}
    for name in _SCALAR_FLAGS:
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.early_stop_patience is not None:
        raw = args.early_stop_patience
        overrides["early_stop_patience"] = None if str(raw).lower() == "none" else int(raw)
    if args.train_mse_target is not None:
        overrides["train_mse_target"] = args.train_mse_target
    pooling = {}
    if args.pooling_video is not None:
        pooling["video"] = args.pooling_video
    if args.pooling_audio is not None:
        pooling["audio"] = args.pooling_audio
    if pooling:
        overrides["pooling"] = pooling
    dropout = {}
    for rate in ("temporal", "text", "adapter", "head"):
        value = getattr(args, f"dropout_{rate}")
        if value is not None:
            dropout[rate] = value
    if dropout:
        overrides["dropout"] = dropout
    if args.clamp_at_inference is not None:
        overrides["clamp_at_inference"] = args.clamp_at_inference == "true"
    return cfg.with_overrides(overrides), paths


def _out_dir(args, paths: dict) -> Path:
    out = args.out or paths.get("output_dir") or os.environ.get(ENV_OUTPUT_DIR)
    if not out:
        raise ConfigError(
            f"no output directory: pass --out, set {ENV_OUTPUT_DIR}, or put "
            f"output_dir in the config file")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _manifest_path(args, paths: dict) -> Path:
    manifest = getattr(args, "manifest", None) or paths.get("manifest")
    if not manifest:
        raise ConfigError("no manifest: pass --manifest or put manifest in the config file")
    return Path(manifest)


def _echo_config(cfg: TrainConfig, out: Path, extra: dict) -> dict:
    resolved = cfg.to_dict()
    resolved.update(extra)
    blob = json.dumps(resolved, sort_keys=True, indent=1) + "\n"
    (out / "resolved_config.json").write_text(blob)
    print("resolved config:")
    print(blob, end="")
    return resolved


def _cmd_gen_synth(args) -> int:
    out = Path(args.out)
    dims = {"video": args.video_dim, "audio": args.audio_dim, "text": args.text_dim}
    spec = SyntheticSpec(n_subjects=args.subjects, seed=args.seed,
                         noise_sigma=args.noise, dims=dims,
                         frame_range=tuple(args.frames), patch_range=tuple(args.patches))
    manifest = gen_synthetic(spec, out)
    print(f"wrote {manifest}")
    return 0


def _cmd_train(args) -> int:
    cfg, paths = _resolve_config(args)
    out = _out_dir(args, paths)
    manifest = _manifest_path(args, paths)
    resolved = _echo_config(cfg, out, {"manifest": str(manifest), "output_dir": str(out)})
    dataset = load_dataset(manifest)
    result = train_on_dataset(dataset, cfg, verbose=args.verbose)
    result.report.config = resolved
    save_checkpoint(result.checkpoint, out / "checkpoint.mmck")
    (out / "report.json").write_text(result.report.to_json())
    print(render_table(result.report), end="")
    print(f"checkpoint: {out / 'checkpoint.mmck'}")
    return 0


def _cmd_kfold(args) -> int:
    cfg, paths = _resolve_config(args)
    out = _out_dir(args, paths)
    manifest = _manifest_path(args, paths)
    resolved = _echo_config(cfg, out, {"manifest": str(manifest), "output_dir": str(out)})
    dataset = load_dataset(manifest)
    # Fold pool is train+val: models see most of the labeled data, and the
    # ensemble's val-pool MSE is reported next to the leak-free out-of-fold
    # number over the whole pool.
    result = train_kfold(dataset.train + dataset.val, dataset.dims, cfg,
                         val_records=dataset.val, verbose=args.verbose)
    for fold in result.folds:
        save_checkpoint(fold.checkpoint, out / f"fold_{fold.index}.mmck")
    doc = {
        "config": resolved,
        "assignments": result.assignments,
        "folds": [{"index": f.index, "val_mse": f.val_mse,
                   "subjects": f.subject_ids} for f in result.folds],
        "oof": result.oof_report.canonical_dict(),
        "ensemble_val": (result.ensemble_val_report.canonical_dict()
                         if result.ensemble_val_report else None),
    }
    (out / "kfold_report.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    print(f"out-of-fold mean MSE: {result.oof_report.mean_mse:.6f}")
    if result.ensemble_val_report:
        print(f"fold-ensemble val mean MSE: {result.ensemble_val_report.mean_mse:.6f}")
    return 0


def _cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.manifest)
    records = dataset.split(args.split)
    if not records:
        raise DataError(f"split {args.split!r} is empty")
    preds = predict_records(records, ckpt.params, ckpt.config, dataset.dims)
    out_path = Path(args.out_csv)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", *DIMENSIONS])
        for rec, row in zip(records, preds):
            writer.writerow([rec.subject_id, *[repr(float(v)) for v in row]])
    print(f"wrote {out_path}")
    return 0


def _cmd_eval(args) -> int:
    dataset = load_dataset(args.manifest)
    labels_by_id = {rec.subject_id: rec.label
                    for split in ("train", "val", "test")
                    for rec in dataset.split(split) if rec.label is not None}
    with Path(args.predictions).open(newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["subject_id", *DIMENSIONS]
        if reader.fieldnames != expected:
            raise DataError(f"predictions csv header {reader.fieldnames} != {expected}")
        ids, rows = [], []
        for entry in reader:
            ids.append(entry["subject_id"])
            rows.append([float(entry[d]) for d in DIMENSIONS])
    if not rows:
        raise DataError("predictions csv holds no rows")
    missing = [sid for sid in ids if sid not in labels_by_id]
    if missing:
        raise DataError(f"no labels in manifest for subjects: {missing[:5]}")
    labels = np.stack([labels_by_id[sid] for sid in ids])
    report = evaluate(np.asarray(rows), labels, split=args.split)
    text = emit_report(report, fmt=args.format, path=args.out)
    print(text, end="")
    return 0


def _cmd_sweep_heads(args) -> int:
    cfg, paths = _resolve_config(args)
    manifest = _manifest_path(args, paths)
    try:
        values = [int(v) for v in args.values.split(",") if v]
    except ValueError as exc:
        raise ConfigError(f"--values must be comma-separated ints: {exc}") from exc
    if not values:
        raise ConfigError("--values is empty")
    dataset = load_dataset(manifest)
    rows = sweep_head_counts(dataset, cfg, values, verbose=args.verbose)
    text = head_sweep_csv(rows)
    out_path = Path(args.out_csv)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(text)
    print(text, end="")
    return 0


def _cmd_pooling_matrix(args) -> int:
    cfg, paths = _resolve_config(args)
    manifest = _manifest_path(args, paths)
    dataset = load_dataset(manifest)
    rows = run_pooling_matrix(dataset, cfg, verbose=args.verbose)
    text = pooling_matrix_table(rows)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmreg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="generate a synthetic dataset with a known oracle")
    g.add_argument("--subjects", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--out", required=True)
    g.add_argument("--video-dim", type=int, default=1152)
    g.add_argument("--audio-dim", type=int, default=768)
    g.add_argument("--text-dim", type=int, default=4096)
    g.add_argument("--frames", type=int, nargs=2, default=(4, 12))
    g.add_argument("--patches", type=int, nargs=2, default=(6, 20))
    g.set_defaults(func=_cmd_gen_synth)

    for name, fn in (("train", _cmd_train), ("kfold", _cmd_kfold)):
        p = sub.add_parser(name)
        p.add_argument("--manifest")
        p.add_argument("--out")
        p.add_argument("--verbose", action="store_true")
        _add_config_flags(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("predict", help="write per-subject scores as CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="val")
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval", help="score a predictions CSV against manifest labels")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep-heads", help="train one model per head count")
    p.add_argument("--manifest")
    p.add_argument("--values", default="4,8,16,32,64,128")
    p.add_argument("--out-csv", required=True)
    p.add_argument("--verbose", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_sweep_heads)

    p = sub.add_parser("pooling-matrix", help="run the 2x2 pooling ablation")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--verbose", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_pooling_matrix)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except MmregError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
