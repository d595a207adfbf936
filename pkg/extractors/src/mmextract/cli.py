"""Command line entry: extract a corpus of response videos into the engine's
container + manifest formats."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .backends import make_backend
from .jobs import extract_corpus


def _read_labels(path: str) -> dict[str, list[float]]:
    labels = {}
    with Path(path).open(newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "subject_id":
                continue
            if len(row) != 6:
                raise ValueError(f"labels row needs subject_id + 5 scores, got {row}")
            labels[row[0]] = [float(v) for v in row[1:]]
    return labels


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="mmextract", description=__doc__)
    parser.add_argument("--corpus", required=True,
                        help="directory of <subject>_q<1-6>.<ext> response videos")
    parser.add_argument("--out", required=True)
    parser.add_argument("--backend", default="stub",
                        help="stub (deterministic, dependency-free) or pretrained")
    parser.add_argument("--fps", type=float, default=1.0,
                        help="frame sampling rate for the video encoder")
    parser.add_argument("--split", choices=("train", "val", "test"), default="test")
    parser.add_argument("--labels", help="CSV of subject_id + 5 scores")
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args(argv)
    try:
        backend = make_backend(args.backend)
        labels = _read_labels(args.labels) if args.labels else None
        manifest = extract_corpus(Path(args.corpus), Path(args.out), backend,
                                  fps=args.fps, split=args.split, labels=labels,
                                  workers=args.workers)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
