"""Temporal pooling: collapse per-frame / per-patch feature sequences into one
global vector per modality. Text arrives as a single vector and passes
through untouched."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError

MODALITIES = ("video", "audio", "text")
POOL_KINDS = ("max", "mean")


@dataclass
class FeatureSequence:
    """A variable-length sequence of fixed-width vectors for one modality of
    one response: (length, dim) float64, length >= 1, all entries finite."""

    modality: str
    data: np.ndarray

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise DataError(f"unknown modality {self.modality!r}")
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise DataError(
                f"{self.modality} sequence must be 2-D, got shape {self.data.shape}")
        if self.data.shape[0] < 1:
            raise DataError(f"{self.modality} sequence is empty")
        if not np.isfinite(self.data).all():
            raise DataError(f"{self.modality} sequence contains non-finite values")

    @property
    def length(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class PoolingConfig:
    """Pooling choice per pooled modality; text has no option (single vector)."""

    video: str = "max"
    audio: str = "max"

    def __post_init__(self):
        for name, kind in (("video", self.video), ("audio", self.audio)):
            if kind not in POOL_KINDS:
                raise ConfigError(f"{name} pooling must be one of {POOL_KINDS}, got {kind!r}")


class PooledResponse(NamedTuple):
    video: np.ndarray
    audio: np.ndarray
    text: np.ndarray


def pool_max(seq: FeatureSequence) -> np.ndarray:
    """Element-wise max over the sequence axis."""
    return seq.data.max(axis=0)


def pool_mean(seq: FeatureSequence) -> np.ndarray:
    """Element-wise arithmetic mean over the sequence axis."""
    return seq.data.mean(axis=0)


_POOLS = {"max": pool_max, "mean": pool_mean}


def pool_response(video: FeatureSequence, audio: FeatureSequence,
                  text: FeatureSequence, cfg: PoolingConfig,
                  expected_dims: dict[str, int] | None = None,
                  response_id: str = "?") -> PooledResponse:
    """Pool one response's three modality sequences into three global vectors.

    ``expected_dims`` lets the caller enforce the manifest's declared widths;
    mismatches name the response and modality.
    """
    if expected_dims is not None:
        for seq in (video, audio, text):
            want = expected_dims[seq.modality]
            if seq.dim != want:
                raise DataError(
                    f"response {response_id}: {seq.modality} dim {seq.dim} does "
                    f"not match declared dim {want}")
    if text.length != 1:
        raise DataError(
            f"response {response_id}: text must be a single vector, got length {text.length}")
    return PooledResponse(
        video=_POOLS[cfg.video](video),
        audio=_POOLS[cfg.audio](audio),
        text=text.data[0],
    )
