"""Config-matrix experiments: the pooling 2x2 ablation and the head-count sweep."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .config import TrainConfig
from .dataio import Dataset
from .evaluator import evaluate
from .model import predict_records
from .trainer import train_on_dataset

POOLING_MATRIX = (("mean", "mean"), ("mean", "max"), ("max", "mean"), ("max", "max"))


def run_pooling_matrix(dataset: Dataset, cfg: TrainConfig,
                       verbose: bool = False) -> list[dict]:
    """Train the four {mean,max} x {video,audio} pooling configs end to end.

    Returns one row per config with validation MSE and, when the test split
    carries labels, test MSE.
    """
    rows = []
    test_labels = None
    if dataset.test and all(r.label is not None for r in dataset.test):
        test_labels = np.stack([r.label for r in dataset.test])
    for video_pool, audio_pool in POOLING_MATRIX:
        run_cfg = cfg.with_overrides({"pooling": {"video": video_pool,
                                                  "audio": audio_pool}})
        result = train_on_dataset(dataset, run_cfg, verbose=verbose)
        test_mse = None
        if test_labels is not None:
            preds = predict_records(dataset.test, result.checkpoint.params,
                                    run_cfg, dataset.dims)
            test_mse = evaluate(preds, test_labels, split="test").mean_mse
        rows.append({"video_pool": video_pool, "audio_pool": audio_pool,
                     "val_mse": result.report.mean_mse, "test_mse": test_mse})
    return rows


def pooling_matrix_table(rows: list[dict]) -> str:
    """Four-row layout: one pooling combination per row, val/test columns."""
    header = f"{'Video':<8}{'Audio':<8}{'Val MSE':>12}{'Test MSE':>12}"
    lines = [header]
    for row in rows:
        test = "-" if row["test_mse"] is None else f"{row['test_mse']:.6f}"
        lines.append(f"{row['video_pool']:<8}{row['audio_pool']:<8}"
                     f"{row['val_mse']:>12.6f}{test:>12}")
    return "\n".join(lines) + "\n"


def sweep_head_counts(dataset: Dataset, cfg: TrainConfig, values: list[int],
                      verbose: bool = False) -> list[dict]:
    """Train one model per head count with a shared seed; rows keep the
    requested order and flag the default head count."""
    default_heads = TrainConfig().head_count
    rows = []
    for h in values:
        run_cfg = replace(cfg, head_count=h)
        run_cfg.validate()
        result = train_on_dataset(dataset, run_cfg, verbose=verbose)
        rows.append({"head_count": h, "val_mse": result.report.mean_mse,
                     "is_default": h == default_heads})
    return rows


def head_sweep_csv(rows: list[dict]) -> str:
    lines = ["head_count,val_mse,is_default"]
    for row in rows:
        lines.append(f"{row['head_count']},{row['val_mse']!r},"
                     f"{str(row['is_default']).lower()}")
    return "\n".join(lines) + "\n"
