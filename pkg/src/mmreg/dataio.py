"""Feature container format, dataset manifest, and synthetic data generation.

Container file layout (little-endian, fixed):

    magic   4 bytes  b"MMFC"
    version u16      1
    modality u8      0=video, 1=audio, 2=text
    length  u32      number of rows (frames / patches / 1 for text)
    dim     u32      row width
    payload float32  length*dim values, row-major

Files store float32; values are promoted to float64 at load. The manifest is
a JSON document declaring per-modality dims and listing six responses per
subject; it is the sole contract between this engine and any feature
extractor.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import DEFAULT_DIMS, SCORE_MAX, SCORE_MIN
from .errors import DataError, ParseError
from .kernel import make_rng
from .pooling import FeatureSequence, pool_mean

MAGIC = b"MMFC"
CONTAINER_VERSION = 1
_HEADER = struct.Struct("<4sHBII")

MODALITY_CODES = {"video": 0, "audio": 1, "text": 2}
_CODE_TO_MODALITY = {v: k for k, v in MODALITY_CODES.items()}

RESPONSES_PER_SUBJECT = 6
SPLIT_NAMES = ("train", "val", "test")
# Split proportions mirror the reference corpus: 450 train / 64 val / 130 test.
_SPLIT_WEIGHTS = (450, 64, 130)

MANIFEST_FORMAT = "mmreg-manifest"
MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# Container read/write


def write_container(path: str | Path, modality: str, data: np.ndarray) -> None:
    """Write one feature sequence as float32. Rejects non-finite values."""
    if modality not in MODALITY_CODES:
        raise DataError(f"unknown modality {modality!r}")
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"container payload must be (length>=1, dim>=1), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError(f"refusing to write non-finite values to {path}")
    header = _HEADER.pack(MAGIC, CONTAINER_VERSION, MODALITY_CODES[modality],
                          arr.shape[0], arr.shape[1])
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_container(path: str | Path) -> FeatureSequence:
    """Read and validate a container; values come back as float64."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ParseError(
            f"{path}: truncated header, expected {_HEADER.size} bytes, got {len(raw)}")
    magic, version, code, length, dim = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r} at byte offset 0, expected {MAGIC!r}")
    if version != CONTAINER_VERSION:
        raise ParseError(
            f"{path}: unsupported version {version} at byte offset 4, "
            f"expected {CONTAINER_VERSION}")
    if code not in _CODE_TO_MODALITY:
        raise ParseError(f"{path}: unknown modality code {code} at byte offset 6")
    if length < 1 or dim < 1:
        raise ParseError(f"{path}: invalid header counts length={length} dim={dim}")
    expected = 4 * length * dim
    actual = len(raw) - _HEADER.size
    if actual != expected:
        raise ParseError(
            f"{path}: payload byte count mismatch, expected {expected} bytes, got {actual}")
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(length, dim)
    finite = np.isfinite(values)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.ravel())[0])
        raise ParseError(
            f"{path}: non-finite float at element {bad} "
            f"(byte offset {_HEADER.size + 4 * bad})")
    return FeatureSequence(modality=_CODE_TO_MODALITY[code],
                           data=values.astype(np.float64))


# ---------------------------------------------------------------------------
# Manifest and records


@dataclass
class ResponseFeatures:
    question_index: int
    video: FeatureSequence
    audio: FeatureSequence
    text: FeatureSequence
    warnings: list[str] = field(default_factory=list)


@dataclass
class SubjectRecord:
    """One subject: six responses in canonical question order plus an
    optional 5-dimension label vector."""

    subject_id: str
    split: str
    responses: list[ResponseFeatures]
    label: np.ndarray | None = None


@dataclass
class Dataset:
    dims: dict[str, int]
    train: list[SubjectRecord]
    val: list[SubjectRecord]
    test: list[SubjectRecord]
    warnings: list[str] = field(default_factory=list)

    def split(self, name: str) -> list[SubjectRecord]:
        if name not in SPLIT_NAMES:
            raise DataError(f"unknown split {name!r}, expected one of {SPLIT_NAMES}")
        return getattr(self, name)


def _parse_label(raw, subject_id: str) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) != 5:
        raise DataError(f"subject {subject_id}: label must be a list of 5 floats, got {raw!r}")
    label = np.asarray(raw, dtype=np.float64)
    if not np.isfinite(label).all():
        raise DataError(f"subject {subject_id}: non-finite label value")
    if (label < SCORE_MIN).any() or (label > SCORE_MAX).any():
        bad = float(label[(label < SCORE_MIN) | (label > SCORE_MAX)][0])
        raise DataError(
            f"subject {subject_id}: label {bad} out of range [{SCORE_MIN}, {SCORE_MAX}]")
    return label


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Load and fully validate a manifest plus every referenced container."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{manifest_path}: cannot parse manifest: {exc}") from exc
    for key in ("dims", "subjects"):
        if key not in doc:
            raise ParseError(f"{manifest_path}: manifest missing required key {key!r}")
    dims = doc["dims"]
    for mod in MODALITY_CODES:
        if mod not in dims or not isinstance(dims[mod], int) or dims[mod] < 1:
            raise ParseError(f"{manifest_path}: dims must declare a positive int for {mod!r}")
    base = manifest_path.parent
    splits: dict[str, list[SubjectRecord]] = {name: [] for name in SPLIT_NAMES}
    warnings: list[str] = []
    seen_ids: set[str] = set()
    for entry in doc["subjects"]:
        sid = entry.get("subject_id")
        if not isinstance(sid, str) or not sid:
            raise DataError(f"subject entry missing subject_id: {entry!r}")
        if sid in seen_ids:
            raise DataError(f"duplicate subject_id {sid!r}")
        seen_ids.add(sid)
        split = entry.get("split")
        if split not in SPLIT_NAMES:
            raise DataError(f"subject {sid}: split must be one of {SPLIT_NAMES}, got {split!r}")
        responses = entry.get("responses", [])
        if len(responses) != RESPONSES_PER_SUBJECT:
            raise DataError(
                f"subject {sid} has {len(responses)} responses, "
                f"expected {RESPONSES_PER_SUBJECT}")
        q_indices = sorted(r.get("question_index") for r in responses)
        if q_indices != list(range(1, RESPONSES_PER_SUBJECT + 1)):
            raise DataError(
                f"subject {sid}: question_index values must be a permutation of "
                f"1..{RESPONSES_PER_SUBJECT}, got {q_indices}")
        label_raw = entry.get("labels")
        if label_raw is None and split != "test":
            raise DataError(f"subject {sid}: split {split!r} requires labels")
        label = None if label_raw is None else _parse_label(label_raw, sid)
        parsed: list[ResponseFeatures] = []
        for resp in sorted(responses, key=lambda r: r["question_index"]):
            seqs: dict[str, FeatureSequence] = {}
            for mod in ("video", "audio", "text"):
                key = f"{mod}_path"
                if key not in resp:
                    raise DataError(
                        f"subject {sid} q{resp['question_index']}: missing {key}")
                seq = read_container(base / resp[key])
                if seq.modality != mod:
                    raise DataError(
                        f"subject {sid} q{resp['question_index']}: file {resp[key]} holds "
                        f"{seq.modality} features, expected {mod}")
                if seq.dim != dims[mod]:
                    raise DataError(
                        f"subject {sid} q{resp['question_index']}: {mod} container dim "
                        f"{seq.dim} does not match declared dim {dims[mod]}")
                seqs[mod] = seq
            if seqs["text"].length != 1:
                raise DataError(
                    f"subject {sid} q{resp['question_index']}: text container must have "
                    f"length 1, got {seqs['text'].length}")
            resp_warnings = list(resp.get("warnings", []))
            warnings.extend(f"subject {sid} q{resp['question_index']}: {w}"
                            for w in resp_warnings)
            parsed.append(ResponseFeatures(question_index=resp["question_index"],
                                           video=seqs["video"], audio=seqs["audio"],
                                           text=seqs["text"], warnings=resp_warnings))
        splits[split].append(SubjectRecord(subject_id=sid, split=split,
                                           responses=parsed, label=label))
    return Dataset(dims={m: int(dims[m]) for m in MODALITY_CODES},
                   train=splits["train"], val=splits["val"], test=splits["test"],
                   warnings=warnings)


def subject_mean_features(record: SubjectRecord) -> np.ndarray:
    """Mean-pooled (video | audio | text) features averaged over the six
    responses. This is the feature map the synthetic labels are affine in."""
    rows = []
    for resp in record.responses:
        rows.append(np.concatenate([pool_mean(resp.video), pool_mean(resp.audio),
                                    resp.text.data[0]]))
    return np.mean(np.stack(rows, axis=0), axis=0)


# ---------------------------------------------------------------------------
# Synthetic data with a planted affine ground truth


@dataclass
class SyntheticSpec:
    n_subjects: int
    seed: int
    noise_sigma: float = 0.0
    dims: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_DIMS))
    frame_range: tuple[int, int] = (4, 12)
    patch_range: tuple[int, int] = (6, 20)
    latent_dim: int = 8
    signal_max: float = 0.9
    response_jitter: float = 0.2
    feature_noise: float = 0.5


def split_counts(n: int) -> tuple[int, int, int]:
    """Largest-remainder split of n subjects in 450:64:130 proportions."""
    total = sum(_SPLIT_WEIGHTS)
    shares = [n * w / total for w in _SPLIT_WEIGHTS]
    counts = [int(s) for s in shares]
    short = n - sum(counts)
    order = sorted(range(3), key=lambda i: shares[i] - counts[i], reverse=True)
    for i in order[:short]:
        counts[i] += 1
    return counts[0], counts[1], counts[2]


def gen_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> Path:
    """Write a full synthetic dataset: containers, manifest, and oracle
    metadata (planted affine map + analytic noise floor).

    Labels are ``clamp(3 + signal + sigma*noise, [1, 5])`` where the signal is
    an affine map of each subject's mean-pooled features, rescaled so
    ``max |signal| == signal_max``. With the signal bounded away from the
    clamp boundary, the best achievable MSE is exactly sigma^2 (0 when
    noiseless), which is recorded as the dataset's oracle floor.
    """
    out = Path(out_dir)
    feat_dir = out / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    rng = make_rng(spec.seed)
    dims = spec.dims
    d_total = dims["video"] + dims["audio"] + dims["text"]
    k = spec.latent_dim
    # Shared mixing matrix: features carry a k-dim subject latent.
    mixing = rng.normal(size=(k, d_total)) / np.sqrt(d_total)
    m_video = mixing[:, :dims["video"]]
    m_audio = mixing[:, dims["video"]:dims["video"] + dims["audio"]]
    m_text = mixing[:, dims["video"] + dims["audio"]:]
    label_mix = rng.normal(size=(5, k))

    subject_ids = [f"subj_{i:04d}" for i in range(spec.n_subjects)]
    entries = []
    pooled_rows = []
    for sid in subject_ids:
        latent = rng.normal(size=k)
        responses = []
        for q in range(1, RESPONSES_PER_SUBJECT + 1):
            u = latent + spec.response_jitter * rng.normal(size=k)
            n_frames = int(rng.integers(spec.frame_range[0], spec.frame_range[1] + 1))
            n_patches = int(rng.integers(spec.patch_range[0], spec.patch_range[1] + 1))
            video = u @ m_video + spec.feature_noise * rng.normal(size=(n_frames, dims["video"]))
            audio = u @ m_audio + spec.feature_noise * rng.normal(size=(n_patches, dims["audio"]))
            text = (u @ m_text + spec.feature_noise * rng.normal(size=(1, dims["text"])))
            paths = {}
            for mod, data in (("video", video), ("audio", audio), ("text", text)):
                rel = f"features/{sid}_q{q}_{mod}.mmfc"
                write_container(out / rel, mod, data)
                paths[mod] = rel
            responses.append({"question_index": q,
                              "video_path": paths["video"],
                              "audio_path": paths["audio"],
                              "text_path": paths["text"]})
        entries.append({"subject_id": sid, "responses": responses})
        # Pool from the files just written so the planted map is affine in
        # exactly what a consumer loads (float32 on disk, float64 in memory).
        loaded = [ResponseFeatures(
            question_index=resp["question_index"],
            video=read_container(out / resp["video_path"]),
            audio=read_container(out / resp["audio_path"]),
            text=read_container(out / resp["text_path"])) for resp in responses]
        record = SubjectRecord(subject_id=sid, split="train", responses=loaded)
        pooled_rows.append(subject_mean_features(record))

    weight_raw = label_mix @ mixing                            # (5, d_total)
    peak = max(float(np.abs(weight_raw @ g).max()) for g in pooled_rows)
    scale = spec.signal_max / peak if peak > 0 else 1.0
    weight = scale * weight_raw
    bias = np.full(5, 3.0)
    noise = spec.noise_sigma * rng.normal(size=(spec.n_subjects, 5))
    # Per-subject gemv with the *stored* weight matrix: an oracle replaying
    # weight @ features + bias from the saved files reproduces noiseless
    # labels bit-exactly.
    raw_labels = np.stack([weight @ g + bias for g in pooled_rows]) + noise
    labels = np.clip(raw_labels, SCORE_MIN, SCORE_MAX)
    clamp_count = int((raw_labels != labels).sum())

    n_train, n_val, n_test = split_counts(spec.n_subjects)
    order = rng.permutation(spec.n_subjects)
    split_of = {}
    for pos, idx in enumerate(order):
        if pos < n_train:
            split_of[idx] = "train"
        elif pos < n_train + n_val:
            split_of[idx] = "val"
        else:
            split_of[idx] = "test"
    for i, entry in enumerate(entries):
        entry["split"] = split_of[i]
        entry["labels"] = [float(v) for v in labels[i]]

    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "dims": {m: int(dims[m]) for m in MODALITY_CODES},
        "subjects": entries,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    planted = {
        "bias": [float(v) for v in bias],
        "weight": [[float(v) for v in row] for row in weight],
        "feature_order": ["video", "audio", "text"],
        "pooling": "mean",
        "response_reduce": "mean",
    }
    (out / "planted.json").write_text(json.dumps(planted, sort_keys=True) + "\n")
    oracle = {
        "seed": spec.seed,
        "n_subjects": spec.n_subjects,
        "noise_sigma": spec.noise_sigma,
        "oracle_mse_floor": spec.noise_sigma ** 2,
        "signal_max": spec.signal_max,
        "clamped_labels": clamp_count,
        "planted_path": "planted.json",
    }
    (out / "oracle.json").write_text(json.dumps(oracle, indent=1, sort_keys=True) + "\n")
    return manifest_path
