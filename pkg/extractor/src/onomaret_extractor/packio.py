"""Writer for the onomaret embedding-pack format.

Implemented here from the format contract (not by importing the consumer):
``<stem>.meta.jsonl`` holds one JSON object per record with keys exactly
``id, modality, class_id, class_name, illustrator_id, pair_id, split``;
``<stem>.vec`` holds the magic ``OEMBPK01``, LE u32 record count, LE u32
dim, the vectors as LE float32 in meta order, and a LE u64 FNV-1a checksum
of the float payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"OEMBPK01"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def write_pack(stem: str | Path, dim: int, rows: list[tuple[dict, np.ndarray]]) -> None:
    """Write meta+vec files for ``rows`` of (metadata dict, vector)."""
    stem = str(stem)
    lines = []
    vectors = np.zeros((len(rows), dim), dtype="<f4")
    for i, (meta, vector) in enumerate(rows):
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (dim,):
            raise ValueError(
                f"record '{meta.get('id')}': vector shape {vector.shape} != ({dim},)"
            )
        if not np.isfinite(vector).all():
            raise ValueError(f"record '{meta.get('id')}': non-finite embedding")
        ordered = {
            "id": meta["id"],
            "modality": meta["modality"],
            "class_id": meta["class_id"],
            "class_name": meta["class_name"],
            "illustrator_id": meta["illustrator_id"],
            "pair_id": meta["pair_id"],
            "split": meta["split"],
        }
        lines.append(json.dumps(ordered, ensure_ascii=True))
        vectors[i] = vector.astype("<f4")
    payload = vectors.tobytes()
    header = MAGIC + struct.pack("<II", len(rows), dim)
    footer = struct.pack("<Q", fnv1a_64(payload))
    Path(stem + ".meta.jsonl").write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )
    Path(stem + ".vec").write_bytes(header + payload + footer)
