"""
Embedding packs
===============

How embedding vectors and their metadata travel through the library:
building records, writing the two-file pack format, validating on load,
and splitting by illustrator so no drawing style leaks across splits.
"""

import struct
import tempfile
from pathlib import Path

import numpy as np

from onomaret import embstore

##############################################################################
# A pack is an ordered list of records, each one embedding vector plus its
# identity: modality, class, illustrator (images only), pair id and split.
# Here we fake a tiny dataset: 3 illustrators, 2 classes, 6 image-audio pairs.

gen = np.random.default_rng(0)
image_records, audio_records = [], []
for i in range(6):
    cls = i % 2
    image_records.append(embstore.EmbeddingRecord(
        id=f"img_{i}", modality="image", class_id=cls, class_name=f"class_{cls}",
        illustrator_id=f"illus_{i // 2}", pair_id=f"pair_{i}", split="train",
        vector=gen.normal(size=8),
    ))
    audio_records.append(embstore.EmbeddingRecord(
        id=f"aud_{i}", modality="audio", class_id=cls, class_name=f"class_{cls}",
        illustrator_id=None, pair_id=f"pair_{i}", split="train",
        vector=gen.normal(size=8),
    ))

image_pack = embstore.make_pack(8, 2, image_records, provenance="demo")
audio_pack = embstore.make_pack(8, 2, audio_records, provenance="demo")
print(f"built {len(image_pack)} image and {len(audio_pack)} audio records, dim {image_pack.dim}")

##############################################################################
# On disk a pack is <stem>.meta.jsonl (one JSON object per record) plus
# <stem>.vec (magic, u32 count, u32 dim, float32 payload, u64 FNV-1a
# checksum). The loader re-validates everything, so corrupt files are
# caught before any number is computed from them.

workdir = Path(tempfile.mkdtemp())
embstore.save_pack(image_pack, workdir / "image")

raw = (workdir / "image.vec").read_bytes()
count, dim = struct.unpack_from("<II", raw, 8)
print(f"vec header: magic={raw[:8]!r} count={count} dim={dim}")
print("first meta line:", (workdir / "image.meta.jsonl").read_text().splitlines()[0])

reloaded = embstore.load_pack(workdir / "image")
print(f"reloaded {len(reloaded)} records, class_count={reloaded.class_count}")

##############################################################################
# Vectors are stored at float32 precision; in memory everything is float64.
# The round-trip is exact at storage precision:

original = image_pack.records[0].vector
assert np.array_equal(reloaded.records[0].vector, original.astype(np.float32).astype(np.float64))
print("round-trip exact at float32 storage precision")

##############################################################################
# Splitting by illustrator keeps every drawing style inside a single split;
# audio clips always follow their paired image.

image_split = embstore.split_by_illustrator(image_pack, ["illus_0"], ["illus_1"], ["illus_2"])
audio_split = embstore.splits_from_pairs(audio_pack, image_split)
for rec in image_split.records:
    print(f"{rec.id}: illustrator {rec.illustrator_id} -> {rec.split}")

##############################################################################
# For controlled experiments there is a synthetic generator: one unit-norm
# centroid per class, per-modality noise, and a seeded random rotation
# applied to the image side so the modalities start out misaligned,
# exactly like embeddings from two unrelated encoders.

spec = embstore.SyntheticSpec(
    class_count=4, dim=16, pairs_per_class=5,
    intra_class_audio_spread=0.01, intra_class_image_spread=0.05,
    cross_modal_rotation_seed=1, noise_seed=2,
)
synth_image, synth_audio = embstore.generate_synthetic(spec)
synth_image, synth_audio = embstore.assign_random_splits(
    synth_image, synth_audio, (0.6, 0.2, 0.2), seed=3
)
counts = {s: sum(1 for r in synth_image.records if r.split == s) for s in embstore.SPLITS}
print("synthetic split counts:", counts)
