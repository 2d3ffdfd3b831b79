from __future__ import annotations

import csv

import numpy as np
import pytest
import torch
from PIL import Image
from scipy.io import wavfile

from onomaret_extractor.encoders import ClapAudioEncoder, ClipImageEncoder


def tiny_image_encoder(seed: int = 0) -> ClipImageEncoder:
    """Randomly initialized CLIP vision tower; same architecture family, no weights."""
    from transformers import CLIPImageProcessor, CLIPVisionConfig, CLIPVisionModelWithProjection

    config = CLIPVisionConfig(
        hidden_size=32, intermediate_size=64, num_attention_heads=2,
        num_hidden_layers=2, image_size=32, patch_size=8, projection_dim=16,
    )
    torch.manual_seed(seed)
    model = CLIPVisionModelWithProjection(config)
    processor = CLIPImageProcessor(
        size={"shortest_edge": 32}, crop_size={"height": 32, "width": 32}
    )
    return ClipImageEncoder(model, processor, identifier=f"test-clip-vision-{seed}")


def tiny_audio_encoder(seed: int = 0) -> ClapAudioEncoder:
    """Randomly initialized CLAP audio tower with a 2-second window."""
    from transformers import ClapAudioConfig, ClapAudioModelWithProjection, ClapFeatureExtractor

    config = ClapAudioConfig(
        depths=[1, 1], num_attention_heads=[1, 1],
        patch_embeds_hidden_size=16, hidden_size=32, projection_dim=16,
    )
    torch.manual_seed(seed)
    model = ClapAudioModelWithProjection(config)
    extractor = ClapFeatureExtractor(max_length_s=2)
    return ClapAudioEncoder(model, extractor, identifier=f"test-clap-audio-{seed}")


@pytest.fixture(scope="session")
def image_encoder():
    return tiny_image_encoder()


@pytest.fixture(scope="session")
def audio_encoder():
    return tiny_audio_encoder()


@pytest.fixture
def dataset_dir(tmp_path):
    """Tiny on-disk dataset in the documented layout: 6 pairs, 3 classes."""
    gen = np.random.default_rng(7)
    (tmp_path / "images").mkdir()
    (tmp_path / "audio").mkdir()
    rows = []
    classes = ["boiling", "camera", "drill"]
    for i in range(6):
        cls = classes[i % 3]
        image_file = f"images/{i}.png"
        audio_file = f"audio/{i}.wav"
        pixels = gen.integers(0, 255, (48, 48, 3), dtype=np.uint8)
        Image.fromarray(pixels, "RGB").save(tmp_path / image_file)
        rate = 16000 if i % 2 else 8000
        seconds = 0.5 if i % 2 else 1.3
        t = np.arange(int(rate * seconds)) / rate
        wave = (0.4 * np.sin(2 * np.pi * (200 + 60 * i) * t)).astype(np.float32)
        if i == 5:
            wave = np.zeros_like(wave)  # one silent clip
        wavfile.write(tmp_path / audio_file, rate, (wave * 32767).astype(np.int16))
        rows.append({
            "pair_id": f"p{i}", "class_name": cls, "illustrator_id": f"illus_{i % 2}",
            "image_file": image_file, "audio_file": audio_file,
        })
    with open(tmp_path / "metadata.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return tmp_path
