"""Extraction jobs: one response video in, three containers plus sidecar out.

A corpus of files named ``<subject>_q<1-6>.<ext>`` becomes a manifest with
exactly six responses per subject. Jobs are independent and may run in a
configurable thread pool; every output is a pure function of its input file,
so the result does not depend on scheduling order.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .backends import FeatureBackend
from .container import write_container, write_manifest

_CORPUS_NAME = re.compile(r"^(?P<subject>.+)_q(?P<question>[1-6])\.[^.]+$")


@dataclass
class ExtractionJob:
    video_path: Path
    subject_id: str
    question_index: int
    out_dir: Path
    fps: float = 1.0


@dataclass
class JobResult:
    subject_id: str
    question_index: int
    video_rel: str
    audio_rel: str
    text_rel: str
    warnings: list[str] = field(default_factory=list)


def run_job(job: ExtractionJob, backend: FeatureBackend) -> JobResult:
    stem = f"{job.subject_id}_q{job.question_index}"
    feat_dir = job.out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    warnings: list[str] = []

    frames = backend.video_frames(job.video_path, job.fps)
    segments = backend.audio_segments(job.video_path)
    transcript = backend.transcribe(job.video_path)
    if not transcript:
        warnings.append("empty transcript; text embedding zeroed")
    text_vec = backend.embed_text(transcript)

    rels = {}
    for mod, data in (("video", frames), ("audio", segments), ("text", text_vec)):
        rel = f"features/{stem}_{mod}.mmfc"
        write_container(job.out_dir / rel, mod, data)
        rels[mod] = rel
    sidecar = {
        "source": job.video_path.name,
        "fps": job.fps,
        "frames": int(frames.shape[0]),
        "audio_segments": int(segments.shape[0]),
        "transcript": transcript,
        "backend": type(backend).__name__,
    }
    (feat_dir / f"{stem}.json").write_text(json.dumps(sidecar, indent=1,
                                                      sort_keys=True) + "\n")
    return JobResult(subject_id=job.subject_id, question_index=job.question_index,
                     video_rel=rels["video"], audio_rel=rels["audio"],
                     text_rel=rels["text"], warnings=warnings)


def scan_corpus(corpus_dir: Path) -> list[tuple[str, int, Path]]:
    """Find response videos named <subject>_q<1-6>.<ext>."""
    found = []
    for path in sorted(corpus_dir.iterdir()):
        if not path.is_file() or path.suffix == ".json":
            continue
        match = _CORPUS_NAME.match(path.name)
        if match:
            found.append((match.group("subject"), int(match.group("question")), path))
    return found


def extract_corpus(corpus_dir: Path, out_dir: Path, backend: FeatureBackend,
                   fps: float = 1.0, split: str = "test",
                   labels: dict[str, list[float]] | None = None,
                   workers: int = 1) -> Path:
    """Extract every response in a corpus and emit a manifest."""
    entries = scan_corpus(corpus_dir)
    if not entries:
        raise ValueError(f"no <subject>_q<1-6> response files under {corpus_dir}")
    by_subject: dict[str, list[tuple[int, Path]]] = {}
    for subject, question, path in entries:
        by_subject.setdefault(subject, []).append((question, path))
    for subject, responses in by_subject.items():
        questions = sorted(q for q, _ in responses)
        if questions != [1, 2, 3, 4, 5, 6]:
            raise ValueError(f"subject {subject}: need responses q1..q6, got {questions}")

    jobs = [ExtractionJob(video_path=path, subject_id=subject,
                          question_index=question, out_dir=out_dir, fps=fps)
            for subject, question, path in entries]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: run_job(j, backend), jobs))
    else:
        results = [run_job(job, backend) for job in jobs]

    grouped: dict[str, list[JobResult]] = {}
    for res in results:
        grouped.setdefault(res.subject_id, []).append(res)
    subjects = []
    for subject in sorted(grouped):
        responses = []
        for res in sorted(grouped[subject], key=lambda r: r.question_index):
            responses.append({"question_index": res.question_index,
                              "video_path": res.video_rel,
                              "audio_path": res.audio_rel,
                              "text_path": res.text_rel,
                              "warnings": res.warnings})
        entry = {"subject_id": subject, "split": split, "responses": responses}
        if labels and subject in labels:
            entry["labels"] = labels[subject]
        elif split != "test":
            raise ValueError(f"split {split!r} requires labels for subject {subject}")
        subjects.append(entry)
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest_path,
                   dims={"video": backend.video_dim, "audio": backend.audio_dim,
                         "text": backend.text_dim},
                   subjects=subjects)
    return manifest_path
