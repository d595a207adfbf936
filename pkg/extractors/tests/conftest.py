"""Fixture corpus: three synthetic response-video files per subject set.

The stub backend models duration as bytes/1024, so a 10 KiB file behaves
like a 10-second clip. One clip is constant bytes (silent) to exercise the
empty-transcript fallback.
"""

import numpy as np
import pytest


def _clip_bytes(seed: int, kib: int) -> bytes:
    return np.random.default_rng(seed).integers(0, 256, size=kib * 1024,
                                                dtype=np.uint8).tobytes()


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory):
    """Three subjects x six responses; subject c's q3 clip is silent."""
    corpus = tmp_path_factory.mktemp("corpus")
    seed = 0
    for subject in ("clip_a", "clip_b", "clip_c"):
        for q in range(1, 7):
            seed += 1
            if subject == "clip_c" and q == 3:
                payload = b"\x00" * 4096
            else:
                payload = _clip_bytes(seed, 10)
            (corpus / f"{subject}_q{q}.mp4").write_bytes(payload)
    return corpus
