"""Frozen pretrained encoders behind a small, deterministic embed() surface.

The image side wraps a CLIP vision tower (ViT-B/32 by default), the audio
side a CLAP audio tower (HTS-AT by default). Both run in eval mode under
no_grad, so the same input always produces the same embedding. Any
compatible transformers model id (or an already-built model/processor pair)
can be injected, which the tests use to run the full pipeline with small
randomly initialized towers.
"""

from __future__ import annotations

import numpy as np
import torch

DEFAULT_CLIP_ID = "openai/clip-vit-base-patch32"
DEFAULT_CLAP_ID = "laion/clap-htsat-unfused"


class ClipImageEncoder:
    """CLIP vision encoder: PIL images in, projection-space vectors out."""

    def __init__(self, model, processor, identifier: str):
        self.model = model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.processor = processor
        self.identifier = identifier

    @classmethod
    def from_pretrained(cls, model_id: str = DEFAULT_CLIP_ID) -> "ClipImageEncoder":
        from transformers import CLIPImageProcessor, CLIPVisionModelWithProjection

        model = CLIPVisionModelWithProjection.from_pretrained(model_id)
        processor = CLIPImageProcessor.from_pretrained(model_id)
        return cls(model, processor, model_id)

    @property
    def dim(self) -> int:
        return int(self.model.config.projection_dim)

    def embed(self, images, batch_size: int = 32) -> np.ndarray:
        """Embed a list of PIL images, returning float32 ``(N, dim)``."""
        chunks = []
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                batch = images[start : start + batch_size]
                inputs = self.processor(images=batch, return_tensors="pt")
                out = self.model(pixel_values=inputs["pixel_values"]).image_embeds
                chunks.append(out.cpu().numpy().astype(np.float32))
        if not chunks:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.concatenate(chunks, axis=0)

    def describe(self) -> dict:
        size = getattr(self.processor, "crop_size", None) or getattr(self.processor, "size", {})
        return {
            "model_id": self.identifier,
            "projection_dim": self.dim,
            "preprocessing": f"CLIP image processor (resize+center-crop {size}, CLIP normalization)",
        }


class ClapAudioEncoder:
    """CLAP audio encoder: fixed-window waveforms in, projection vectors out."""

    def __init__(self, model, feature_extractor, identifier: str):
        self.model = model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.feature_extractor = feature_extractor
        self.identifier = identifier

    @classmethod
    def from_pretrained(cls, model_id: str = DEFAULT_CLAP_ID) -> "ClapAudioEncoder":
        from transformers import ClapAudioModelWithProjection, ClapFeatureExtractor

        model = ClapAudioModelWithProjection.from_pretrained(model_id)
        extractor = ClapFeatureExtractor.from_pretrained(model_id)
        return cls(model, extractor, model_id)

    @property
    def dim(self) -> int:
        return int(self.model.config.projection_dim)

    @property
    def sampling_rate(self) -> int:
        return int(self.feature_extractor.sampling_rate)

    @property
    def window_samples(self) -> int:
        # the extractor's maximum clip length; inputs are pre-shaped to this
        return int(self.feature_extractor.nb_max_samples)

    def embed(self, waves, batch_size: int = 8) -> np.ndarray:
        """Embed waveforms already shaped to ``window_samples`` at ``sampling_rate``."""
        chunks = []
        with torch.no_grad():
            for start in range(0, len(waves), batch_size):
                batch = [np.asarray(w, dtype=np.float64) for w in waves[start : start + batch_size]]
                for w in batch:
                    if w.shape != (self.window_samples,):
                        raise ValueError(
                            f"waveform must be pre-shaped to {self.window_samples} samples, "
                            f"got {w.shape}"
                        )
                feats = self.feature_extractor(
                    batch,
                    sampling_rate=self.sampling_rate,
                    return_tensors="pt",
                    padding="repeatpad",
                    truncation="rand_trunc",  # never engages: inputs fill the window
                )
                out = self.model(input_features=feats["input_features"]).audio_embeds
                chunks.append(out.cpu().numpy().astype(np.float32))
        if not chunks:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.concatenate(chunks, axis=0)

    def describe(self) -> dict:
        return {
            "model_id": self.identifier,
            "projection_dim": self.dim,
            "preprocessing": (
                f"mono mix, resample to {self.sampling_rate} Hz, center-crop/repeat-pad "
                f"to {self.window_samples} samples, CLAP log-mel features"
            ),
        }
