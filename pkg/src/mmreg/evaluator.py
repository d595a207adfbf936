"""Per-dimension and mean MSE reporting.

The headline metric is the unweighted mean of the five per-dimension MSEs.
Reports render as a human table, canonical JSON (byte-deterministic,
round-trippable), or CSV with a fixed column order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DataError

DIMENSIONS = ("integrity", "collegiality", "social_versatility",
              "development_orientation", "overall_hireability")
SHORT_NAMES = ("Integr", "Colleg", "Soc", "Dev", "Hirea")

CSV_HEADER = ("integrity,collegiality,social_versatility,"
              "development_orientation,overall_hireability,mean")


@dataclass
class RunReport:
    per_dimension: dict[str, float]
    mean_mse: float
    split: str
    config: dict[str, Any] = field(default_factory=dict)
    seed: int | None = None
    fold_assignments: dict[str, int] | None = None
    timing: dict[str, Any] = field(default_factory=dict)

    def canonical_dict(self) -> dict[str, Any]:
        """Everything that must be reproducible run-to-run with a fixed seed.
        Wall-clock time is reported but excluded here."""
        timing = {k: v for k, v in self.timing.items() if k != "wall_seconds"}
        return {
            "per_dimension": {d: self.per_dimension[d] for d in DIMENSIONS},
            "mean_mse": self.mean_mse,
            "split": self.split,
            "config": self.config,
            "seed": self.seed,
            "fold_assignments": self.fold_assignments,
            "timing": timing,
        }

    def to_json(self) -> str:
        doc = self.canonical_dict()
        doc["timing"] = dict(self.timing)
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def evaluate(predictions: np.ndarray, labels: np.ndarray, split: str = "val",
             config: dict[str, Any] | None = None, seed: int | None = None,
             fold_assignments: dict[str, int] | None = None,
             timing: dict[str, Any] | None = None) -> RunReport:
    """Per-dimension MSE over subjects plus their unweighted mean."""
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if predictions.ndim != 2 or predictions.shape[1] != len(DIMENSIONS):
        raise DataError(f"predictions must be (n, 5), got {predictions.shape}")
    if predictions.shape != labels.shape:
        raise DataError(
            f"predictions shape {predictions.shape} != labels shape {labels.shape}")
    if predictions.shape[0] < 1:
        raise DataError("evaluate needs at least one subject")
    per_dim = np.mean((predictions - labels) ** 2, axis=0)
    if not np.isfinite(per_dim).all():
        raise DataError("non-finite MSE; predictions or labels contain bad values")
    per_dimension = {d: float(v) for d, v in zip(DIMENSIONS, per_dim)}
    return RunReport(per_dimension=per_dimension,
                     mean_mse=float(np.mean(per_dim)),
                     split=split, config=config or {}, seed=seed,
                     fold_assignments=fold_assignments, timing=timing or {})


def render_table(report: RunReport, row_name: str | None = None) -> str:
    """Fixed-width table with the five dimension columns plus the mean."""
    name = row_name if row_name is not None else report.split
    header = f"{'Run':<16}" + "".join(f"{s:>10}" for s in SHORT_NAMES) + f"{'Mean':>10}"
    values = [report.per_dimension[d] for d in DIMENSIONS] + [report.mean_mse]
    row = f"{name:<16}" + "".join(f"{v:>10.4f}" for v in values)
    return header + "\n" + row + "\n"


def render_csv(report: RunReport) -> str:
    values = [report.per_dimension[d] for d in DIMENSIONS] + [report.mean_mse]
    return CSV_HEADER + "\n" + ",".join(repr(v) for v in values) + "\n"


def emit_report(report: RunReport, fmt: str = "table",
                path: str | Path | None = None) -> str:
    if fmt == "table":
        text = render_table(report)
    elif fmt == "json":
        text = report.to_json()
    elif fmt == "csv":
        text = render_csv(report)
    else:
        raise DataError(f"unknown report format {fmt!r}, expected table/json/csv")
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_report(text: str) -> RunReport:
    """Inverse of the JSON emission."""
    doc = json.loads(text)
    return RunReport(per_dimension=doc["per_dimension"], mean_mse=doc["mean_mse"],
                     split=doc["split"], config=doc.get("config", {}),
                     seed=doc.get("seed"),
                     fold_assignments=doc.get("fold_assignments"),
                     timing=doc.get("timing", {}))
