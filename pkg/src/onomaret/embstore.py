"""Embedding packs: the record model, on-disk format, splits, synthetic data.

A pack is a validated, immutable collection of fixed-width embedding vectors
with identity/class/illustrator/pair/split metadata. On disk a pack is two
files sharing a stem:

* ``<stem>.meta.jsonl``  one JSON object per record, keys exactly
  ``id, modality, class_id, class_name, illustrator_id, pair_id, split``;
  line order defines record order.
* ``<stem>.vec``  8 ASCII magic bytes ``OEMBPK01``, little-endian u32 record
  count, little-endian u32 dim, the vectors as little-endian float32 in meta
  order, then a little-endian u64 FNV-1a checksum of the float payload.

Vectors are stored at float32 precision and promoted to float64 in memory.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .hashing import fnv1a_64
from .nncore import RngStream

MAGIC = b"OEMBPK01"
MODALITIES = ("image", "audio")
SPLITS = ("train", "val", "test")

META_KEYS = ("id", "modality", "class_id", "class_name", "illustrator_id", "pair_id", "split")


class PackError(ValueError):
    """Invalid pack contents or a malformed pack file."""


@dataclass(frozen=True)
class EmbeddingRecord:
    """One embedding vector plus its identity metadata."""

    id: str
    modality: str
    class_id: int
    class_name: str
    illustrator_id: str | None
    pair_id: str
    split: str
    vector: np.ndarray

    def with_split(self, split: str) -> "EmbeddingRecord":
        return replace(self, split=split)


@dataclass(frozen=True)
class EmbeddingPack:
    """An ordered, validated set of records sharing one vector dimension."""

    dim: int
    class_count: int
    records: tuple[EmbeddingRecord, ...]
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.records)


def _check_record(rec: EmbeddingRecord, dim: int, class_count: int) -> None:
    rid = rec.id
    if not isinstance(rid, str) or not rid:
        raise PackError(f"record id must be a non-empty string, got {rid!r}")
    if rec.modality not in MODALITIES:
        raise PackError(f"record '{rid}': unknown modality {rec.modality!r}")
    if rec.split not in SPLITS:
        raise PackError(f"record '{rid}': unknown split {rec.split!r}")
    if rec.modality == "audio" and rec.illustrator_id is not None:
        raise PackError(f"record '{rid}': audio records carry no illustrator_id")
    if not (0 <= rec.class_id < class_count):
        raise PackError(
            f"record '{rid}': class_id {rec.class_id} outside [0, {class_count})"
        )
    vec = rec.vector
    if vec.shape != (dim,):
        raise PackError(f"record '{rid}': vector shape {vec.shape} does not match dim {dim}")
    if not np.isfinite(vec).all():
        raise PackError(f"record '{rid}': vector has non-finite components")


def validate_pack(pack: EmbeddingPack) -> None:
    """Check every pack invariant, raising :class:`PackError` with the offending id."""
    if pack.dim <= 0:
        raise PackError(f"dim must be positive, got {pack.dim}")
    if pack.class_count <= 0:
        raise PackError(f"class_count must be positive, got {pack.class_count}")
    ids: set[str] = set()
    id_to_name: dict[int, str] = {}
    name_to_id: dict[str, int] = {}
    pair_modalities: dict[str, dict[str, EmbeddingRecord]] = {}
    illus_splits: dict[str, set[str]] = {}
    for rec in pack.records:
        _check_record(rec, pack.dim, pack.class_count)
        if rec.id in ids:
            raise PackError(f"duplicate record id '{rec.id}'")
        ids.add(rec.id)
        known = id_to_name.get(rec.class_id)
        if known is not None and known != rec.class_name:
            raise PackError(
                f"record '{rec.id}': class_id {rec.class_id} maps to both "
                f"'{known}' and '{rec.class_name}'"
            )
        id_to_name[rec.class_id] = rec.class_name
        known_id = name_to_id.get(rec.class_name)
        if known_id is not None and known_id != rec.class_id:
            raise PackError(
                f"record '{rec.id}': class_name '{rec.class_name}' maps to both "
                f"ids {known_id} and {rec.class_id}"
            )
        name_to_id[rec.class_name] = rec.class_id
        per_pair = pair_modalities.setdefault(rec.pair_id, {})
        if rec.modality in per_pair:
            raise PackError(
                f"record '{rec.id}': pair '{rec.pair_id}' already has a "
                f"{rec.modality} record"
            )
        per_pair[rec.modality] = rec
        if rec.modality == "image" and rec.illustrator_id is not None:
            illus_splits.setdefault(rec.illustrator_id, set()).add(rec.split)
    for pair_id, per_pair in pair_modalities.items():
        if len(per_pair) == 2:
            img, aud = per_pair["image"], per_pair["audio"]
            if img.class_id != aud.class_id:
                raise PackError(f"pair '{pair_id}': image and audio class_id differ")
            if img.split != aud.split:
                raise PackError(f"pair '{pair_id}': image and audio split differ")
    for illus, splits in illus_splits.items():
        if len(splits) > 1:
            raise PackError(
                f"illustrator '{illus}' appears in multiple splits: {sorted(splits)}"
            )


def make_pack(
    dim: int,
    class_count: int,
    records: Iterable[EmbeddingRecord],
    provenance: str = "",
) -> EmbeddingPack:
    """Build a pack, validate it, and freeze its vectors against mutation."""
    recs = []
    for rec in records:
        vec = np.asarray(rec.vector, dtype=np.float64)
        vec.setflags(write=False)
        recs.append(replace(rec, vector=vec))
    pack = EmbeddingPack(dim=dim, class_count=class_count, records=tuple(recs), provenance=provenance)
    validate_pack(pack)
    return pack


def vector_matrix(pack: EmbeddingPack) -> np.ndarray:
    """All vectors stacked in record order, shape ``(len(pack), dim)``."""
    if not pack.records:
        return np.zeros((0, pack.dim))
    return np.stack([rec.vector for rec in pack.records])


def pack_checksum(pack: EmbeddingPack) -> int:
    """FNV-1a over metadata and float64 vector bytes; detects any mutation."""
    h = bytearray()
    for rec in pack.records:
        meta = (rec.id, rec.modality, rec.class_id, rec.class_name,
                rec.illustrator_id, rec.pair_id, rec.split)
        h += repr(meta).encode()
        h += np.ascontiguousarray(rec.vector, dtype="<f8").tobytes()
    return fnv1a_64(bytes(h))


# ---------------------------------------------------------------------------
# On-disk format

def save_pack(pack: EmbeddingPack, stem: str | Path) -> None:
    """Write ``<stem>.meta.jsonl`` and ``<stem>.vec`` for a valid pack."""
    validate_pack(pack)
    stem = str(stem)
    lines = []
    for rec in pack.records:
        obj = {
            "id": rec.id,
            "modality": rec.modality,
            "class_id": rec.class_id,
            "class_name": rec.class_name,
            "illustrator_id": rec.illustrator_id,
            "pair_id": rec.pair_id,
            "split": rec.split,
        }
        lines.append(json.dumps(obj, ensure_ascii=True))
    meta_text = "".join(line + "\n" for line in lines)
    payload = np.ascontiguousarray(vector_matrix(pack), dtype="<f4").tobytes()
    header = MAGIC + struct.pack("<II", len(pack.records), pack.dim)
    footer = struct.pack("<Q", fnv1a_64(payload))
    Path(stem + ".meta.jsonl").write_text(meta_text, encoding="utf-8")
    Path(stem + ".vec").write_bytes(header + payload + footer)


def _parse_meta_line(line: str, lineno: int) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise PackError(f"meta line {lineno}: invalid JSON ({exc})") from exc
    if not isinstance(obj, dict) or set(obj) != set(META_KEYS):
        raise PackError(
            f"meta line {lineno}: keys must be exactly {', '.join(META_KEYS)}"
        )
    return obj


def load_pack(stem: str | Path) -> EmbeddingPack:
    """Load and re-validate a pack; raises :class:`PackError` on any corruption.

    ``class_count`` is not part of the on-disk format and is inferred as
    ``max(class_id) + 1`` (1 for an empty pack); provenance is not persisted.
    """
    stem = str(stem)
    meta_path = Path(stem + ".meta.jsonl")
    vec_path = Path(stem + ".vec")
    if not meta_path.exists():
        raise PackError(f"missing meta file: {meta_path}")
    if not vec_path.exists():
        raise PackError(f"missing vector file: {vec_path}")

    raw = vec_path.read_bytes()
    if len(raw) < len(MAGIC) + 8 + 8:
        raise PackError(f"{vec_path}: file too short to hold a pack header")
    if raw[: len(MAGIC)] != MAGIC:
        raise PackError(f"{vec_path}: bad magic/version {raw[:len(MAGIC)]!r}")
    count, dim = struct.unpack_from("<II", raw, len(MAGIC))
    if dim == 0:
        raise PackError(f"{vec_path}: header declares dim 0")
    payload_len = len(raw) - len(MAGIC) - 8 - 8
    expected_len = count * dim * 4
    if payload_len != expected_len:
        if count > 0 and payload_len % (count * 4) == 0:
            raise PackError(
                f"{vec_path}: dimension mismatch, header declares dim {dim} but "
                f"payload holds dim {payload_len // (count * 4)}"
            )
        raise PackError(
            f"{vec_path}: payload size {payload_len} bytes does not match "
            f"{count} x {dim} float32 ({expected_len} bytes)"
        )
    payload = raw[len(MAGIC) + 8 : len(MAGIC) + 8 + payload_len]
    (stored_sum,) = struct.unpack_from("<Q", raw, len(raw) - 8)
    actual_sum = fnv1a_64(payload)
    if stored_sum != actual_sum:
        raise PackError(
            f"{vec_path}: checksum mismatch (stored {stored_sum:016x}, "
            f"computed {actual_sum:016x})"
        )
    vectors = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    vectors = vectors.reshape(count, dim) if count else vectors.reshape(0, dim)

    meta_lines = meta_path.read_text(encoding="utf-8").splitlines()
    if len(meta_lines) != count:
        raise PackError(
            f"{meta_path}: {len(meta_lines)} meta lines but vector header declares {count}"
        )
    records = []
    max_class = -1
    for i, line in enumerate(meta_lines):
        obj = _parse_meta_line(line, i + 1)
        if not isinstance(obj["class_id"], int):
            raise PackError(f"meta line {i + 1}: class_id must be an integer")
        max_class = max(max_class, obj["class_id"])
        records.append(
            EmbeddingRecord(
                id=obj["id"],
                modality=obj["modality"],
                class_id=obj["class_id"],
                class_name=obj["class_name"],
                illustrator_id=obj["illustrator_id"],
                pair_id=obj["pair_id"],
                split=obj["split"],
                vector=vectors[i],
            )
        )
    class_count = max_class + 1 if max_class >= 0 else 1
    return make_pack(dim=dim, class_count=class_count, records=records)


# ---------------------------------------------------------------------------
# Splits

def load_split_manifest(path: str | Path) -> dict[str, list[str]]:
    """Read a ``{"train": [...], "val": [...], "test": [...]}`` JSON manifest."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict) or set(obj) != set(SPLITS):
        raise PackError(f"split manifest must have keys exactly {SPLITS}")
    for split, ids in obj.items():
        if not isinstance(ids, list) or not all(isinstance(x, str) for x in ids):
            raise PackError(f"split manifest entry '{split}' must be a list of ids")
    return obj


def split_by_illustrator(
    pack: EmbeddingPack,
    train_illustrators: Iterable[str],
    val_illustrators: Iterable[str],
    test_illustrators: Iterable[str],
) -> EmbeddingPack:
    """Relabel splits by illustrator.

    Image records take the split of their illustrator; audio records in the
    same pack take the split of their paired image. The three sets must be
    pairwise disjoint and cover every illustrator present.
    """
    assignment: dict[str, str] = {}
    for split, ids in (
        ("train", train_illustrators),
        ("val", val_illustrators),
        ("test", test_illustrators),
    ):
        for illus in ids:
            if illus in assignment:
                raise PackError(
                    f"illustrator '{illus}' assigned to both "
                    f"'{assignment[illus]}' and '{split}'"
                )
            assignment[illus] = split

    image_split: dict[str, str] = {}
    relabeled: list[EmbeddingRecord] = []
    for rec in pack.records:
        if rec.modality != "image":
            continue
        if rec.illustrator_id is None:
            raise PackError(f"record '{rec.id}': image record has no illustrator_id")
        split = assignment.get(rec.illustrator_id)
        if split is None:
            raise PackError(f"illustrator '{rec.illustrator_id}' not covered by any split set")
        image_split[rec.pair_id] = split
    for rec in pack.records:
        if rec.modality == "image":
            relabeled.append(rec.with_split(image_split[rec.pair_id]))
        else:
            split = image_split.get(rec.pair_id)
            if split is None:
                raise PackError(
                    f"record '{rec.id}': no paired image record to derive a split from"
                )
            relabeled.append(rec.with_split(split))
    return make_pack(pack.dim, pack.class_count, relabeled, pack.provenance)


def splits_from_pairs(pack: EmbeddingPack, reference: EmbeddingPack) -> EmbeddingPack:
    """Relabel ``pack`` so each record takes the split of its pair in ``reference``."""
    ref_split: dict[str, str] = {}
    for rec in reference.records:
        prev = ref_split.get(rec.pair_id)
        if prev is not None and prev != rec.split:
            raise PackError(f"reference pair '{rec.pair_id}' has conflicting splits")
        ref_split[rec.pair_id] = rec.split
    relabeled = []
    for rec in pack.records:
        split = ref_split.get(rec.pair_id)
        if split is None:
            raise PackError(f"record '{rec.id}': pair '{rec.pair_id}' absent from reference pack")
        relabeled.append(rec.with_split(split))
    return make_pack(pack.dim, pack.class_count, relabeled, pack.provenance)


def assign_random_splits(
    image_pack: EmbeddingPack,
    audio_pack: EmbeddingPack,
    fractions: tuple[float, float, float],
    seed: int,
) -> tuple[EmbeddingPack, EmbeddingPack]:
    """Split at the pair level, uniformly at random, with no illustrator structure.

    ``fractions`` are (train, val, test) and must sum to 1; train and val
    counts are floored and test takes the remainder.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise PackError("fractions must be three non-negative numbers")
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise PackError(f"fractions must sum to 1, got {sum(fractions)}")
    pair_ids = [rec.pair_id for rec in image_pack.records]
    if len(set(pair_ids)) != len(pair_ids):
        raise PackError("image pack has duplicate pair ids")
    n = len(pair_ids)
    order = RngStream(seed).permutation(n)
    n_train = int(n * fractions[0])
    n_val = int(n * fractions[1])
    split_of: dict[str, str] = {}
    for pos, idx in enumerate(order):
        if pos < n_train:
            split = "train"
        elif pos < n_train + n_val:
            split = "val"
        else:
            split = "test"
        split_of[pair_ids[idx]] = split
    image_out = make_pack(
        image_pack.dim,
        image_pack.class_count,
        [rec.with_split(split_of[rec.pair_id]) for rec in image_pack.records],
        image_pack.provenance,
    )
    audio_out = splits_from_pairs(audio_pack, image_out)
    return image_out, audio_out


def subset_by_split(pack: EmbeddingPack, split: str) -> EmbeddingPack:
    """A new pack holding only the records of one split (class_count preserved)."""
    if split not in SPLITS:
        raise PackError(f"unknown split {split!r}")
    return make_pack(
        pack.dim,
        pack.class_count,
        [rec for rec in pack.records if rec.split == split],
        pack.provenance,
    )


# ---------------------------------------------------------------------------
# Paired views for training and evaluation

@dataclass(frozen=True)
class PairedEmbeddings:
    """Image/audio vectors aligned row-by-row through their pair ids."""

    image: np.ndarray
    audio: np.ndarray
    labels: np.ndarray
    pair_ids: tuple[str, ...]
    image_ids: tuple[str, ...]
    audio_ids: tuple[str, ...]
    class_count: int
    class_names: dict[int, str]

    def __len__(self) -> int:
        return len(self.pair_ids)

    @property
    def dim(self) -> int:
        return self.image.shape[1]


def make_pairs(
    image_pack: EmbeddingPack,
    audio_pack: EmbeddingPack,
    split: str | None = None,
) -> PairedEmbeddings:
    """Join two single-modality packs on pair_id, optionally filtered to a split."""
    if image_pack.dim != audio_pack.dim:
        raise PackError(
            f"packs disagree on dim ({image_pack.dim} vs {audio_pack.dim})"
        )
    if image_pack.class_count != audio_pack.class_count:
        raise PackError("packs disagree on class_count")
    audio_by_pair: dict[str, EmbeddingRecord] = {}
    for rec in audio_pack.records:
        if rec.modality != "audio":
            raise PackError(f"record '{rec.id}': audio pack contains a {rec.modality} record")
        audio_by_pair[rec.pair_id] = rec
    images, audios, labels = [], [], []
    pair_ids, image_ids, audio_ids = [], [], []
    class_names: dict[int, str] = {}
    for rec in image_pack.records:
        if rec.modality != "image":
            raise PackError(f"record '{rec.id}': image pack contains a {rec.modality} record")
        if split is not None and rec.split != split:
            continue
        mate = audio_by_pair.get(rec.pair_id)
        if mate is None:
            raise PackError(f"pair '{rec.pair_id}' has no audio record")
        if mate.class_id != rec.class_id:
            raise PackError(f"pair '{rec.pair_id}': image and audio class_id differ")
        if mate.split != rec.split:
            raise PackError(f"pair '{rec.pair_id}': image and audio split differ")
        images.append(rec.vector)
        audios.append(mate.vector)
        labels.append(rec.class_id)
        pair_ids.append(rec.pair_id)
        image_ids.append(rec.id)
        audio_ids.append(mate.id)
        class_names[rec.class_id] = rec.class_name
    dim = image_pack.dim
    return PairedEmbeddings(
        image=np.array(images, dtype=np.float64).reshape(len(images), dim),
        audio=np.array(audios, dtype=np.float64).reshape(len(audios), dim),
        labels=np.array(labels, dtype=np.int64),
        pair_ids=tuple(pair_ids),
        image_ids=tuple(image_ids),
        audio_ids=tuple(audio_ids),
        class_count=image_pack.class_count,
        class_names=class_names,
    )


# ---------------------------------------------------------------------------
# Synthetic data

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic paired-embedding generator.

    Each class gets a random unit-norm centroid. Audio vectors are the
    centroid plus Gaussian noise of scale ``intra_class_audio_spread``; image
    vectors get their own noise scale and are then passed through a seeded
    random rotation (identity when ``identity_rotation`` is set), so the two
    modalities live in misaligned coordinate systems like real encoder pairs.
    """

    class_count: int
    dim: int
    pairs_per_class: int
    intra_class_audio_spread: float
    intra_class_image_spread: float
    cross_modal_rotation_seed: int = 0
    noise_seed: int = 0
    identity_rotation: bool = False

    def validate(self) -> None:
        if self.class_count < 1 or self.dim < 1 or self.pairs_per_class < 1:
            raise PackError("class_count, dim and pairs_per_class must be >= 1")
        if self.intra_class_audio_spread < 0 or self.intra_class_image_spread < 0:
            raise PackError("spreads must be non-negative")


def random_rotation(dim: int, seed: int) -> np.ndarray:
    """Seeded random orthogonal matrix: QR of a Gaussian, diagonal sign-fixed."""
    gauss = RngStream(seed).normal((dim, dim))
    q, r = np.linalg.qr(gauss)
    return q * np.sign(np.diag(r))


def generate_synthetic(spec: SyntheticSpec) -> tuple[EmbeddingPack, EmbeddingPack]:
    """Deterministically generate an (image pack, audio pack) pair from a spec."""
    spec.validate()
    c, d, p = spec.class_count, spec.dim, spec.pairs_per_class
    noise = RngStream(spec.noise_seed)
    centroids = noise.normal((c, d))
    norms = np.linalg.norm(centroids, axis=1, keepdims=True)
    if (norms == 0).any():
        raise PackError("degenerate zero-norm class centroid")
    centroids /= norms
    audio_noise = noise.normal((c * p, d)) * spec.intra_class_audio_spread
    image_noise = noise.normal((c * p, d)) * spec.intra_class_image_spread
    rotation = (
        np.eye(d)
        if spec.identity_rotation
        else random_rotation(d, spec.cross_modal_rotation_seed)
    )

    width = len(str(c - 1)) if c > 1 else 1
    pwidth = len(str(p - 1)) if p > 1 else 1
    image_records, audio_records = [], []
    for k in range(c):
        name = f"class_{k:0{width}d}"
        for i in range(p):
            row = k * p + i
            pair = f"pair_{k:0{width}d}_{i:0{pwidth}d}"
            audio_vec = centroids[k] + audio_noise[row]
            image_vec = rotation @ (centroids[k] + image_noise[row])
            image_records.append(
                EmbeddingRecord(
                    id=f"img_{k:0{width}d}_{i:0{pwidth}d}",
                    modality="image",
                    class_id=k,
                    class_name=name,
                    illustrator_id=None,
                    pair_id=pair,
                    split="train",
                    vector=image_vec,
                )
            )
            audio_records.append(
                EmbeddingRecord(
                    id=f"aud_{k:0{width}d}_{i:0{pwidth}d}",
                    modality="audio",
                    class_id=k,
                    class_name=name,
                    illustrator_id=None,
                    pair_id=pair,
                    split="train",
                    vector=audio_vec,
                )
            )
    provenance = (
        f"synthetic(classes={c}, dim={d}, pairs_per_class={p}, "
        f"audio_spread={spec.intra_class_audio_spread}, "
        f"image_spread={spec.intra_class_image_spread}, "
        f"rotation_seed={spec.cross_modal_rotation_seed}, "
        f"noise_seed={spec.noise_seed}, identity_rotation={spec.identity_rotation})"
    )
    image_pack = make_pack(d, c, image_records, provenance)
    audio_pack = make_pack(d, c, audio_records, provenance)
    return image_pack, audio_pack
