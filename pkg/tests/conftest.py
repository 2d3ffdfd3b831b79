from __future__ import annotations

import numpy as np
import pytest

from onomaret.embstore import EmbeddingRecord, make_pack


def build_pack(
    gen: np.random.Generator,
    *,
    dim: int = 8,
    n_classes: int = 3,
    pairs_per_class: int = 2,
    modality: str = "image",
    illustrators: list[str] | None = None,
    split: str = "train",
):
    """Random single-modality pack; illustrators cycle over image pairs."""
    records = []
    for k in range(n_classes):
        for i in range(pairs_per_class):
            idx = k * pairs_per_class + i
            illus = None
            if modality == "image" and illustrators:
                illus = illustrators[idx % len(illustrators)]
            records.append(
                EmbeddingRecord(
                    id=f"{modality[:3]}_{k}_{i}",
                    modality=modality,
                    class_id=k,
                    class_name=f"class_{k}",
                    illustrator_id=illus,
                    pair_id=f"pair_{k}_{i}",
                    split=split,
                    vector=gen.normal(size=dim),
                )
            )
    return make_pack(dim, n_classes, records)


@pytest.fixture
def gen():
    return np.random.default_rng(1234)
