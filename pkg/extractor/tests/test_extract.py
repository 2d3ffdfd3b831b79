from __future__ import annotations

import json

import numpy as np
import pytest

from onomaret.embstore import load_pack, make_pairs

from onomaret_extractor import cli
from onomaret_extractor.dataset import scan_dataset
from onomaret_extractor.extract import extract_audio, extract_images, run_extraction

from conftest import tiny_audio_encoder, tiny_image_encoder


class TestExtractImages:
    def test_pack_validates_and_carries_metadata(self, dataset_dir, image_encoder, tmp_path):
        items = scan_dataset(dataset_dir)
        count = extract_images(items, image_encoder, tmp_path / "image")
        assert count == 6
        pack = load_pack(tmp_path / "image")
        assert pack.dim == image_encoder.dim
        by_pair = {rec.pair_id: rec for rec in pack.records}
        for item in items:
            rec = by_pair[item.pair_id]
            assert rec.class_name == item.class_name
            assert rec.illustrator_id == item.illustrator_id
            assert rec.modality == "image"

    def test_same_image_twice_identical_vectors(self, dataset_dir, image_encoder, tmp_path):
        items = scan_dataset(dataset_dir)
        doubled = items + [
            type(items[0])(
                pair_id="dup", class_name=items[0].class_name,
                illustrator_id=items[0].illustrator_id,
                image_path=items[0].image_path, audio_path=items[0].audio_path,
            )
        ]
        extract_images(doubled, image_encoder, tmp_path / "img")
        pack = load_pack(tmp_path / "img")
        first = next(r for r in pack.records if r.pair_id == items[0].pair_id)
        dup = next(r for r in pack.records if r.pair_id == "dup")
        np.testing.assert_array_equal(first.vector, dup.vector)

    def test_empty_dataset_empty_pack(self, image_encoder, tmp_path):
        assert extract_images([], image_encoder, tmp_path / "empty") == 0
        assert len(load_pack(tmp_path / "empty")) == 0


class TestExtractAudio:
    def test_pack_validates_with_finite_vectors(self, dataset_dir, audio_encoder, tmp_path):
        items = scan_dataset(dataset_dir)
        count = extract_audio(items, audio_encoder, tmp_path / "audio")
        assert count == 6
        pack = load_pack(tmp_path / "audio")
        assert pack.dim == audio_encoder.dim
        for rec in pack.records:  # includes the silent clip
            assert np.isfinite(rec.vector).all()
            assert rec.illustrator_id is None

    def test_same_clip_twice_identical_vectors(self, dataset_dir, audio_encoder, tmp_path):
        items = scan_dataset(dataset_dir)
        extract_audio(items, audio_encoder, tmp_path / "a")
        extract_audio(items, audio_encoder, tmp_path / "b")
        assert (tmp_path / "a.vec").read_bytes() == (tmp_path / "b.vec").read_bytes()


class TestRunExtraction:
    def test_both_modalities_pair_up_for_the_consumer(
        self, dataset_dir, image_encoder, audio_encoder, tmp_path
    ):
        items = scan_dataset(dataset_dir)
        manifest = run_extraction(
            items, str(dataset_dir), tmp_path / "miao", "both",
            image_encoder=image_encoder, audio_encoder=audio_encoder,
        )
        image = load_pack(tmp_path / "miao_image")
        audio = load_pack(tmp_path / "miao_audio")
        pairs = make_pairs(image, audio)  # consumer-side join must succeed
        assert len(pairs) == 6
        doc = json.loads((tmp_path / "miao.extraction.json").read_text())
        assert doc["item_count"] == 6
        assert doc["encoders"]["image"]["model_id"] == image_encoder.identifier
        assert doc["encoders"]["audio"]["projection_dim"] == audio_encoder.dim
        assert manifest.outputs["image"]["records"] == 6

    def test_single_modality(self, dataset_dir, image_encoder, tmp_path):
        items = scan_dataset(dataset_dir)
        manifest = run_extraction(
            items, str(dataset_dir), tmp_path / "only", "image",
            image_encoder=image_encoder,
        )
        assert "audio" not in manifest.outputs
        assert (tmp_path / "only_image.vec").exists()
        assert not (tmp_path / "only_audio.vec").exists()

    def test_unknown_modality(self, dataset_dir, image_encoder):
        with pytest.raises(ValueError, match="modality"):
            run_extraction(scan_dataset(dataset_dir), str(dataset_dir), "x", "video")


class TestCli:
    def test_end_to_end_with_injected_encoders(self, dataset_dir, tmp_path, monkeypatch, capsys):
        monkeypatch.setattr(
            cli.ClipImageEncoder, "from_pretrained",
            classmethod(lambda _cls, model_id: tiny_image_encoder()),
        )
        monkeypatch.setattr(
            cli.ClapAudioEncoder, "from_pretrained",
            classmethod(lambda _cls, model_id: tiny_audio_encoder()),
        )
        code = cli.main([
            "--dataset", str(dataset_dir), "--out", str(tmp_path / "out"),
            "--modality", "both", "--batch-size", "4",
        ])
        assert code == 0
        printed = capsys.readouterr().out
        assert "image: 6 records" in printed and "audio: 6 records" in printed
        assert len(load_pack(tmp_path / "out_image")) == 6
        assert len(load_pack(tmp_path / "out_audio")) == 6

    def test_missing_dataset_fails_cleanly(self, tmp_path, capsys):
        code = cli.main(["--dataset", str(tmp_path / "nowhere"),
                         "--out", str(tmp_path / "x"), "--modality", "image"])
        assert code == 1
        assert "error" in capsys.readouterr().err
