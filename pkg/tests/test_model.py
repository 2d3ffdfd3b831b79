from __future__ import annotations

import json

import numpy as np
import pytest

from onomaret import embstore
from onomaret.embstore import SyntheticSpec, assign_random_splits, generate_synthetic, make_pairs
from onomaret.model import (
    AlignmentModel,
    CheckpointError,
    ModelDims,
    TrainConfig,
    batch_loss,
    classify,
    init_model,
    load_checkpoint,
    project_audio,
    project_image,
    save_checkpoint,
    train,
)
from onomaret.nncore import DenseLayer, RngStream, dense_forward, grad_check

from oracles import flatten_params, per_sample_model_loss, write_flat_params

SMALL = ModelDims(input_dim=6, hidden_dim=5, joint_dim=4, class_count=3)


def small_batch(gen, n=4):
    return (
        gen.normal(size=(n, SMALL.input_dim)),
        gen.normal(size=(n, SMALL.input_dim)),
        gen.integers(0, SMALL.class_count, n),
    )


def model_loss_fn(m, images, audio, labels, config):
    """Flat-parameter loss closure for grad_check; dropout stays off."""
    params = m.parameters()

    def fn(flat):
        write_flat_params(params, flat)
        result = batch_loss(m, images, audio, labels, config, training=False)
        return result.total, flatten_params(result.grads)

    return fn, flatten_params(params)


class TestInit:
    def test_same_seed_bit_identical(self):
        a = init_model(SMALL, seed=3)
        b = init_model(SMALL, seed=3)
        for name, arr in a.parameters().items():
            np.testing.assert_array_equal(arr, b.parameters()[name])

    def test_weight_bound_and_zero_bias(self):
        dims = ModelDims(input_dim=512, hidden_dim=8, joint_dim=4, class_count=3)
        m = init_model(dims, seed=0)
        w = m.image_projector[0].weights
        assert np.abs(w).max() <= 1.0 / np.sqrt(512)
        for name, arr in m.parameters().items():
            if name.endswith(".bias"):
                assert not arr.any()

    def test_different_seeds_differ(self):
        a = init_model(SMALL, seed=1)
        b = init_model(SMALL, seed=2)
        assert any(
            not np.array_equal(arr, b.parameters()[name])
            for name, arr in a.parameters().items()
        )


class TestProjection:
    def test_zero_model_zero_output(self, gen):
        zero = AlignmentModel(
            (DenseLayer(np.zeros((5, 6)), np.zeros(5)), DenseLayer(np.zeros((4, 5)), np.zeros(4))),
            (DenseLayer(np.zeros((5, 6)), np.zeros(5)), DenseLayer(np.zeros((4, 5)), np.zeros(4))),
            DenseLayer(np.zeros((3, 4)), np.zeros(3)),
            SMALL,
        )
        assert not project_image(zero, gen.normal(size=(2, 6))).any()

    def test_inference_is_deterministic(self, gen):
        m = init_model(SMALL, seed=0)
        z = gen.normal(size=(3, 6))
        np.testing.assert_array_equal(project_image(m, z), project_image(m, z))

    def test_matches_straight_line_composition(self, gen):
        from onomaret.nncore import relu

        m = init_model(SMALL, seed=5)
        z = gen.normal(size=(3, 6))
        fc1, fc2 = m.image_projector
        expected = dense_forward(fc2, relu(dense_forward(fc1, z)))
        np.testing.assert_allclose(project_image(m, z), expected)

    def test_heads_share_no_parameters(self, gen):
        m = init_model(SMALL, seed=6)
        z = gen.normal(size=(2, 6))
        before = project_audio(m, z)
        m.image_projector[0].weights += 10.0
        m.image_projector[1].weights -= 3.0
        np.testing.assert_array_equal(project_audio(m, z), before)

    def test_training_mode_uses_dropout(self, gen):
        m = init_model(SMALL, seed=7)
        z = gen.normal(size=(4, 6))
        dropped = project_image(m, z, training=True, dropout_rate=0.5, rng=RngStream(1))
        assert not np.array_equal(dropped, project_image(m, z))


class TestClassify:
    def test_zero_classifier_zero_logits(self, gen):
        m = init_model(SMALL, seed=1)
        m.classifier.weights[...] = 0.0
        m.classifier.bias[...] = 0.0
        assert not classify(m, gen.normal(size=(2, 4))).any()

    def test_shared_across_modalities(self, gen):
        # The same joint vector scores identically no matter which head made it.
        m = init_model(SMALL, seed=2)
        joint = gen.normal(size=(3, 4))
        np.testing.assert_array_equal(classify(m, joint), classify(m, joint.copy()))

    def test_matches_dense_forward(self, gen):
        m = init_model(SMALL, seed=3)
        joint = gen.normal(size=(3, 4))
        np.testing.assert_allclose(classify(m, joint), dense_forward(m.classifier, joint))


class TestBatchLoss:
    def test_identical_heads_and_perfect_classifier(self):
        # Both modalities map e_y to itself; a huge diagonal classifier nails CE.
        dims = ModelDims(input_dim=3, hidden_dim=3, joint_dim=3, class_count=3)
        head = (DenseLayer(np.eye(3), np.zeros(3)), DenseLayer(np.eye(3), np.zeros(3)))
        m = AlignmentModel(
            (head[0].copy(), head[1].copy()),
            (head[0].copy(), head[1].copy()),
            DenseLayer(50.0 * np.eye(3), np.zeros(3)),
            dims,
        )
        inputs = np.eye(3)
        labels = np.arange(3)
        result = batch_loss(m, inputs, inputs, labels, TrainConfig())
        assert result.align == 0.0
        assert result.cls == pytest.approx(0.0, abs=1e-12)

    def test_zero_cls_weight_and_equal_projections(self):
        dims = ModelDims(input_dim=3, hidden_dim=3, joint_dim=3, class_count=3)
        head = (DenseLayer(np.eye(3), np.zeros(3)), DenseLayer(np.eye(3), np.zeros(3)))
        gen = np.random.default_rng(0)
        m = AlignmentModel(
            (head[0].copy(), head[1].copy()),
            (head[0].copy(), head[1].copy()),
            DenseLayer(gen.normal(size=(3, 3)), gen.normal(size=3)),
            dims,
        )
        inputs = np.abs(gen.normal(size=(4, 3)))  # positive, so ReLU is transparent
        labels = gen.integers(0, 3, 4)
        result = batch_loss(m, inputs, inputs, labels, TrainConfig(cls_weight=0.0))
        assert result.total == 0.0

    def test_matches_per_sample_composition(self, gen):
        m = init_model(SMALL, seed=9)
        images, audio, labels = small_batch(gen)
        config = TrainConfig(align_weight=0.7, cls_weight=1.3)
        result = batch_loss(m, images, audio, labels, config)
        oracle = per_sample_model_loss(m, images, audio, labels, 0.7, 1.3)
        assert result.total == pytest.approx(oracle, rel=1e-12)

    def test_gradients_match_finite_differences(self, gen):
        m = init_model(SMALL, seed=11)
        images, audio, labels = small_batch(gen)
        fn, flat = model_loss_fn(m, images, audio, labels, TrainConfig())
        assert grad_check(fn, flat, h=1e-6) < 1e-5

    def test_empty_batch_rejected(self):
        m = init_model(SMALL, seed=0)
        with pytest.raises(ValueError, match="non-empty"):
            batch_loss(m, np.zeros((0, 6)), np.zeros((0, 6)), np.zeros(0, dtype=int), TrainConfig())

    def test_label_out_of_range_propagates(self, gen):
        m = init_model(SMALL, seed=0)
        images, audio, _ = small_batch(gen)
        with pytest.raises(ValueError, match="range"):
            batch_loss(m, images, audio, np.array([0, 1, 2, 3]), TrainConfig())


def tiny_split_dataset(seed=0):
    spec = SyntheticSpec(5, 12, 6, 0.02, 0.05, cross_modal_rotation_seed=seed, noise_seed=seed + 1)
    image, audio = generate_synthetic(spec)
    image, audio = assign_random_splits(image, audio, (0.6, 0.2, 0.2), seed=seed + 2)
    return (
        make_pairs(image, audio, "train"),
        make_pairs(image, audio, "val"),
        ModelDims(input_dim=12, hidden_dim=12, joint_dim=6, class_count=5),
    )


class TestTrain:
    def test_zero_epochs_returns_init_model(self):
        train_pairs, val_pairs, dims = tiny_split_dataset()
        config = TrainConfig(max_epochs=0, seed=4)
        m, report = train(train_pairs, val_pairs, config, dims)
        init = init_model(dims, seed=4)
        for name, arr in m.parameters().items():
            np.testing.assert_array_equal(arr, init.parameters()[name])
        assert report.train_loss == [] and report.val_map == []
        assert report.best_epoch is None

    def test_deterministic_given_seed(self):
        train_pairs, val_pairs, dims = tiny_split_dataset()
        config = TrainConfig(max_epochs=4, patience=10, batch_size=8, seed=1)
        m1, r1 = train(train_pairs, val_pairs, config, dims)
        m2, r2 = train(train_pairs, val_pairs, config, dims)
        for name, arr in m1.parameters().items():
            np.testing.assert_array_equal(arr, m2.parameters()[name])
        assert r1.to_json_dict() == r2.to_json_dict()

    def test_training_improves_validation_map(self):
        train_pairs, val_pairs, dims = tiny_split_dataset(seed=3)
        config = TrainConfig(max_epochs=25, patience=25, batch_size=16, seed=0)
        _, report = train(train_pairs, val_pairs, config, dims)
        assert max(report.val_map) > report.val_map[0]

    def test_empty_training_set_rejected(self):
        train_pairs, val_pairs, dims = tiny_split_dataset()
        config = TrainConfig(max_epochs=1)
        with pytest.raises(ValueError, match="empty"):
            train(val_pairs.__class__(
                image=np.zeros((0, 12)), audio=np.zeros((0, 12)),
                labels=np.zeros(0, dtype=np.int64), pair_ids=(), image_ids=(),
                audio_ids=(), class_count=5, class_names={},
            ), val_pairs, config, dims)

    def test_dim_mismatch_rejected(self):
        train_pairs, val_pairs, _ = tiny_split_dataset()
        bad_dims = ModelDims(input_dim=8, hidden_dim=4, joint_dim=4, class_count=5)
        with pytest.raises(ValueError, match="input_dim"):
            train(train_pairs, val_pairs, TrainConfig(max_epochs=1), bad_dims)

    def test_history_lengths_match_epochs(self):
        train_pairs, val_pairs, dims = tiny_split_dataset()
        config = TrainConfig(max_epochs=5, patience=100, batch_size=8, seed=2)
        _, report = train(train_pairs, val_pairs, config, dims)
        n = len(report.train_loss)
        assert n == 5
        assert len(report.align_loss) == len(report.cls_loss) == len(report.val_map) == n

    def test_warm_start_is_deterministic(self, tmp_path):
        train_pairs, val_pairs, dims = tiny_split_dataset()
        config = TrainConfig(max_epochs=2, patience=10, batch_size=8, seed=5)
        first, _ = train(train_pairs, val_pairs, config, dims)
        save_checkpoint(first, tmp_path / "warm")
        resume = TrainConfig(max_epochs=3, patience=10, batch_size=8, seed=6)
        a, ra = train(train_pairs, val_pairs, resume, dims, initial=load_checkpoint(tmp_path / "warm"))
        b, rb = train(train_pairs, val_pairs, resume, dims, initial=load_checkpoint(tmp_path / "warm"))
        for name, arr in a.parameters().items():
            np.testing.assert_array_equal(arr, b.parameters()[name])
        assert ra.to_json_dict() == rb.to_json_dict()


class TestCheckpoints:
    def test_roundtrip_bit_identical(self, tmp_path):
        m = init_model(SMALL, seed=13)
        save_checkpoint(m, tmp_path / "ck")
        back = load_checkpoint(tmp_path / "ck")
        for name, arr in m.parameters().items():
            np.testing.assert_array_equal(arr, back.parameters()[name])
        assert back.dims == m.dims

    def test_manifest_shape_tampering_detected(self, tmp_path):
        m = init_model(SMALL, seed=13)
        save_checkpoint(m, tmp_path / "ck")
        path = tmp_path / "ck.manifest.json"
        manifest = json.loads(path.read_text())
        manifest["tensors"][0]["shape"] = [999, 6]
        path.write_text(json.dumps(manifest))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "ck")

    def test_blob_corruption_detected(self, tmp_path):
        m = init_model(SMALL, seed=13)
        save_checkpoint(m, tmp_path / "ck")
        blob = bytearray((tmp_path / "ck.blob").read_bytes())
        blob[10] ^= 0x01
        (tmp_path / "ck.blob").write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(tmp_path / "ck")

    def test_missing_files(self, tmp_path):
        with pytest.raises(CheckpointError, match="missing"):
            load_checkpoint(tmp_path / "nope")
