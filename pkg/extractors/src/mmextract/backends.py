"""Feature backends.

A backend turns one response video into: per-frame image embeddings, per-
segment audio embeddings, a transcript, and a text embedding of that
transcript. Two implementations:

* StubBackend — deterministic, dependency-free features derived from the
  file bytes. It exists so the full extraction pipeline, container layout,
  and manifest emission can run and be tested on machines without GPU model
  stacks; its vectors carry no semantics.
* PretrainedBackend — wires real model stacks (vision-language image
  encoder, speech emotion encoder, ASR, LLM text embedder) behind the same
  interface; requires the optional heavy dependencies and model downloads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

VIDEO_DIM = 1152
AUDIO_DIM = 768
TEXT_DIM = 4096

_STUB_WORDS = ("alpha", "bravo", "cider", "delta", "ember", "fjord", "gamma",
               "honey", "igloo", "jolly", "kudos", "lemon", "mango", "noble",
               "olive", "piano")


class FeatureBackend(Protocol):
    video_dim: int
    audio_dim: int
    text_dim: int

    def video_frames(self, path: Path, fps: float) -> np.ndarray: ...
    def audio_segments(self, path: Path) -> np.ndarray: ...
    def transcribe(self, path: Path) -> str: ...
    def embed_text(self, transcript: str) -> np.ndarray: ...


def _seeded_rng(*parts: bytes) -> np.random.Generator:
    digest = hashlib.blake2b(b"|".join(parts), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


@dataclass
class StubBackend:
    """Deterministic stand-in: same file bytes, same features, every time.

    The stub models a clip's duration as len(bytes)/1024 seconds (so a
    10 KiB fixture behaves like a 10-second clip) and treats a file whose
    payload is a single repeated byte as silent audio.
    """

    bytes_per_second: int = 1024
    segments_per_second: float = 2.0
    video_dim: int = VIDEO_DIM
    audio_dim: int = AUDIO_DIM
    text_dim: int = TEXT_DIM

    def _duration(self, raw: bytes) -> float:
        return max(1.0, min(600.0, len(raw) / self.bytes_per_second))

    def video_frames(self, path: Path, fps: float) -> np.ndarray:
        raw = Path(path).read_bytes()
        n_frames = max(1, int(round(self._duration(raw) * fps)))
        rng = _seeded_rng(b"video", raw)
        return rng.normal(size=(n_frames, self.video_dim)).astype(np.float32)

    def audio_segments(self, path: Path) -> np.ndarray:
        raw = Path(path).read_bytes()
        n_segments = max(1, int(round(self._duration(raw) * self.segments_per_second)))
        rng = _seeded_rng(b"audio", raw)
        return rng.normal(size=(n_segments, self.audio_dim)).astype(np.float32)

    def transcribe(self, path: Path) -> str:
        raw = Path(path).read_bytes()
        if not raw or len(set(raw)) <= 1:
            return ""  # silent clip
        rng = _seeded_rng(b"asr", raw)
        n_words = int(rng.integers(5, 30))
        return " ".join(_STUB_WORDS[int(i)] for i in rng.integers(0, len(_STUB_WORDS),
                                                                  size=n_words))

    def embed_text(self, transcript: str) -> np.ndarray:
        if not transcript:
            return np.zeros((1, self.text_dim), dtype=np.float32)
        rng = _seeded_rng(b"text", transcript.encode())
        return rng.normal(size=(1, self.text_dim)).astype(np.float32)


@dataclass
class PretrainedBackend:
    """Real extractors behind the same interface.

    Loads a vision-language image encoder for sampled frames, a speech
    emotion encoder for audio segments, an ASR system, and an LLM embedding
    model whose final-layer last-token state is the text feature. All four
    are heavyweight optional dependencies; constructing this backend without
    them installed raises with instructions.
    """

    image_model: str = "google/siglip2-so400m-patch14-384"
    audio_model: str = "emotion2vec/emotion2vec_plus_seed"
    text_model: str = "Salesforce/SFR-Embedding-Mistral"
    asr_model: str = "openai/whisper-base"
    video_dim: int = VIDEO_DIM
    audio_dim: int = AUDIO_DIM
    text_dim: int = TEXT_DIM

    def __post_init__(self):
        try:
            import torch  # noqa: F401
            import transformers  # noqa: F401
        except ImportError as exc:
            raise RuntimeError(
                "PretrainedBackend needs the optional model stack: "
                "pip install torch transformers soundfile av; "
                "use --backend stub for a dependency-free run") from exc

    def video_frames(self, path: Path, fps: float) -> np.ndarray:
        raise NotImplementedError(
            "wire your frame decoder + image encoder here; emit one "
            f"{self.video_dim}-d row per sampled frame")

    def audio_segments(self, path: Path) -> np.ndarray:
        raise NotImplementedError(
            f"wire the speech emotion encoder here; emit {self.audio_dim}-d rows")

    def transcribe(self, path: Path) -> str:
        raise NotImplementedError("wire the ASR system here")

    def embed_text(self, transcript: str) -> np.ndarray:
        raise NotImplementedError(
            f"wire the LLM embedder here; emit a single {self.text_dim}-d row "
            "(final hidden state of the last token)")


BACKENDS = {"stub": StubBackend}


def make_backend(name: str) -> FeatureBackend:
    if name == "pretrained":
        return PretrainedBackend()
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; choose from "
                         f"{sorted([*BACKENDS, 'pretrained'])}")
    return BACKENDS[name]()
