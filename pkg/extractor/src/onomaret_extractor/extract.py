"""Extraction orchestration: dataset items -> embedding packs + manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image

from .audio import prepare_clip
from .dataset import DatasetItem, class_id_map
from .encoders import ClapAudioEncoder, ClipImageEncoder
from .packio import write_pack


@dataclass
class ExtractionManifest:
    """Everything needed to trace a pack back to its inputs and encoders."""

    dataset_source: str
    item_count: int
    encoders: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "dataset_source": self.dataset_source,
                "item_count": self.item_count,
                "encoders": self.encoders,
                "outputs": self.outputs,
            },
            indent=2,
        )


def _provenance_meta(item: DatasetItem, ids: dict[str, int], modality: str) -> dict:
    return {
        "id": f"{'img' if modality == 'image' else 'aud'}_{item.pair_id}",
        "modality": modality,
        "class_id": ids[item.class_name],
        "class_name": item.class_name,
        "illustrator_id": item.illustrator_id if modality == "image" else None,
        "pair_id": item.pair_id,
        "split": "train",  # real splits are assigned later, by the ingest step
    }


def extract_images(
    items: list[DatasetItem],
    encoder: ClipImageEncoder,
    out_stem: str | Path,
    batch_size: int = 32,
) -> int:
    """Embed every onomatopoeic image and write the image pack."""
    ids = class_id_map(items)
    images = []
    for item in items:
        with Image.open(item.image_path) as img:
            images.append(img.convert("RGB"))
    vectors = encoder.embed(images, batch_size=batch_size)
    rows = [
        (_provenance_meta(item, ids, "image"), vectors[i])
        for i, item in enumerate(items)
    ]
    write_pack(out_stem, encoder.dim, rows)
    return len(rows)


def extract_audio(
    items: list[DatasetItem],
    encoder: ClapAudioEncoder,
    out_stem: str | Path,
    batch_size: int = 8,
) -> int:
    """Embed every sound clip and write the audio pack."""
    ids = class_id_map(items)
    waves = [
        prepare_clip(item.audio_path, encoder.sampling_rate, encoder.window_samples)
        for item in items
    ]
    vectors = encoder.embed(waves, batch_size=batch_size)
    rows = [
        (_provenance_meta(item, ids, "audio"), vectors[i])
        for i, item in enumerate(items)
    ]
    write_pack(out_stem, encoder.dim, rows)
    return len(rows)


def run_extraction(
    items: list[DatasetItem],
    dataset_source: str,
    out_stem: str | Path,
    modality: str = "both",
    image_encoder: ClipImageEncoder | None = None,
    audio_encoder: ClapAudioEncoder | None = None,
    batch_size: int = 16,
) -> ExtractionManifest:
    """Run the requested extractions and write the manifest JSON."""
    if modality not in ("image", "audio", "both"):
        raise ValueError(f"unknown modality {modality!r}")
    out_stem = str(out_stem)
    manifest = ExtractionManifest(dataset_source=dataset_source, item_count=len(items))
    if modality in ("image", "both"):
        if image_encoder is None:
            image_encoder = ClipImageEncoder.from_pretrained()
        count = extract_images(items, image_encoder, f"{out_stem}_image", batch_size)
        manifest.encoders["image"] = image_encoder.describe()
        manifest.outputs["image"] = {"stem": f"{out_stem}_image", "records": count}
    if modality in ("audio", "both"):
        if audio_encoder is None:
            audio_encoder = ClapAudioEncoder.from_pretrained()
        count = extract_audio(items, audio_encoder, f"{out_stem}_audio", batch_size)
        manifest.encoders["audio"] = audio_encoder.describe()
        manifest.outputs["audio"] = {"stem": f"{out_stem}_audio", "records": count}
    Path(f"{out_stem}.extraction.json").write_text(manifest.to_json() + "\n", encoding="utf-8")
    return manifest
