"""Writer for the engine's feature container and manifest formats.

This is an independent implementation of the published contract (the
cross-component boundary), kept deliberately free of any engine imports.

Container layout, little-endian:
    magic "MMFC" | version u16=1 | modality u8 (0=video,1=audio,2=text)
    | length u32 | dim u32 | float32 payload, row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MMFC"
VERSION = 1
_HEADER = struct.Struct("<4sHBII")
MODALITY_CODES = {"video": 0, "audio": 1, "text": 2}

MANIFEST_FORMAT = "mmreg-manifest"
MANIFEST_VERSION = 1


def write_container(path: str | Path, modality: str, data: np.ndarray) -> None:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"container payload must be (length>=1, dim>=1), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"refusing to write non-finite values to {path}")
    header = _HEADER.pack(MAGIC, VERSION, MODALITY_CODES[modality],
                          arr.shape[0], arr.shape[1])
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def write_manifest(path: str | Path, dims: dict[str, int],
                   subjects: list[dict]) -> None:
    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "dims": {m: int(dims[m]) for m in ("video", "audio", "text")},
        "subjects": subjects,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
