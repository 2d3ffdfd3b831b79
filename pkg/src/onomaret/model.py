"""The alignment model: two projection heads, a shared classifier, training.

Each projection head is two dense layers (input -> hidden -> joint) with a
ReLU and one dropout site between them. A single classifier scores the joint
embeddings of both modalities during training and is discarded at retrieval.
The training objective is the batch mean of the squared-distance alignment
term between paired projections plus the cross-entropy of both modalities'
class scores.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embstore import PairedEmbeddings
from .hashing import fnv1a_64
from .nncore import (
    AdamWState,
    DenseLayer,
    RngStream,
    adamw_step,
    dense_backward,
    dense_forward,
    dropout,
    relu,
    relu_backward,
    softmax_cross_entropy_rows,
)

# Training-loop draws (shuffles, dropout masks) start at this stream counter so
# they can never collide with the counters used by init_model.
_TRAIN_COUNTER_OFFSET = 1 << 32


class CheckpointError(ValueError):
    """Corrupt or inconsistent checkpoint files."""


@dataclass(frozen=True)
class ModelDims:
    """Widths of the projection heads and classifier."""

    input_dim: int = 512
    hidden_dim: int = 512
    joint_dim: int = 256
    class_count: int = 50

    def validate(self) -> None:
        if min(self.input_dim, self.hidden_dim, self.joint_dim, self.class_count) < 1:
            raise ValueError(f"all dims must be positive, got {self}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule hyperparameters; defaults follow the evaluation setup."""

    lr: float = 1e-3
    weight_decay: float = 1e-4
    dropout_rate: float = 0.1
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    align_weight: float = 1.0
    cls_weight: float = 1.0

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.align_weight < 0 or self.cls_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.max_epochs < 0 or self.patience < 0:
            raise ValueError("max_epochs and patience must be non-negative")


class AlignmentModel:
    """Image projector, audio projector and the classifier they share."""

    def __init__(
        self,
        image_projector: tuple[DenseLayer, DenseLayer],
        audio_projector: tuple[DenseLayer, DenseLayer],
        classifier: DenseLayer,
        dims: ModelDims,
    ):
        dims.validate()
        for head, tag in ((image_projector, "image"), (audio_projector, "audio")):
            fc1, fc2 = head
            if fc1.in_dim != dims.input_dim or fc1.out_dim != dims.hidden_dim:
                raise ValueError(f"{tag} fc1 shape does not match dims {dims}")
            if fc2.in_dim != dims.hidden_dim or fc2.out_dim != dims.joint_dim:
                raise ValueError(f"{tag} fc2 shape does not match dims {dims}")
        if classifier.in_dim != dims.joint_dim or classifier.out_dim != dims.class_count:
            raise ValueError(f"classifier shape does not match dims {dims}")
        self.image_projector = image_projector
        self.audio_projector = audio_projector
        self.classifier = classifier
        self.dims = dims

    def parameters(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed by a fixed, documented name order."""
        layers = {
            "image_fc1": self.image_projector[0],
            "image_fc2": self.image_projector[1],
            "audio_fc1": self.audio_projector[0],
            "audio_fc2": self.audio_projector[1],
            "classifier": self.classifier,
        }
        params: dict[str, np.ndarray] = {}
        for name, layer in layers.items():
            params[f"{name}.weight"] = layer.weights
            params[f"{name}.bias"] = layer.bias
        return params

    def copy(self) -> "AlignmentModel":
        return AlignmentModel(
            (self.image_projector[0].copy(), self.image_projector[1].copy()),
            (self.audio_projector[0].copy(), self.audio_projector[1].copy()),
            self.classifier.copy(),
            self.dims,
        )

    def checksum(self) -> int:
        """FNV-1a over all parameters as little-endian float64 bytes."""
        blob = bytearray()
        for arr in self.parameters().values():
            blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
        return fnv1a_64(bytes(blob))


def init_model(dims: ModelDims, seed: int) -> AlignmentModel:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases, seeded.

    Layers are drawn in the fixed order image fc1, image fc2, audio fc1,
    audio fc2, classifier, so the same seed always yields the same model.
    """
    dims.validate()
    rng = RngStream(seed)

    def make(out_dim: int, in_dim: int) -> DenseLayer:
        bound = 1.0 / np.sqrt(in_dim)
        return DenseLayer(rng.uniform(-bound, bound, (out_dim, in_dim)), np.zeros(out_dim))

    image = (make(dims.hidden_dim, dims.input_dim), make(dims.joint_dim, dims.hidden_dim))
    audio = (make(dims.hidden_dim, dims.input_dim), make(dims.joint_dim, dims.hidden_dim))
    classifier = make(dims.class_count, dims.joint_dim)
    return AlignmentModel(image, audio, classifier, dims)


def _head_forward(
    head: tuple[DenseLayer, DenseLayer],
    z: np.ndarray,
    training: bool,
    dropout_rate: float,
    rng: RngStream | None,
) -> tuple[np.ndarray, dict]:
    fc1, fc2 = head
    pre = dense_forward(fc1, z)
    act = relu(pre)
    dropped, mask = dropout(act, dropout_rate, rng, training)
    out = dense_forward(fc2, dropped)
    cache = {"input": np.asarray(z, dtype=np.float64), "pre": pre, "dropped": dropped, "mask": mask}
    return out, cache


def project_image(
    model: AlignmentModel,
    z: np.ndarray,
    *,
    training: bool = False,
    dropout_rate: float = 0.0,
    rng: RngStream | None = None,
) -> np.ndarray:
    """Map raw image embeddings into the joint space (dense, ReLU, dropout, dense)."""
    out, _ = _head_forward(model.image_projector, z, training, dropout_rate, rng)
    return out


def project_audio(
    model: AlignmentModel,
    z: np.ndarray,
    *,
    training: bool = False,
    dropout_rate: float = 0.0,
    rng: RngStream | None = None,
) -> np.ndarray:
    """Map raw audio embeddings into the joint space with the audio head."""
    out, _ = _head_forward(model.audio_projector, z, training, dropout_rate, rng)
    return out


def classify(model: AlignmentModel, joint: np.ndarray) -> np.ndarray:
    """Class logits for joint-space embeddings; softmax lives inside the loss."""
    return dense_forward(model.classifier, joint)


@dataclass
class LossBreakdown:
    """Scalar loss, its two components, and the full parameter gradient."""

    total: float
    align: float
    cls: float
    grads: dict[str, np.ndarray]


def _head_backward(
    head: tuple[DenseLayer, DenseLayer],
    cache: dict,
    upstream: np.ndarray,
    prefix: str,
    grads: dict[str, np.ndarray],
) -> None:
    fc1, fc2 = head
    w2_grad, b2_grad, d_dropped = dense_backward(fc2, cache["dropped"], upstream)
    d_act = d_dropped * cache["mask"]
    d_pre = relu_backward(cache["pre"], d_act)
    w1_grad, b1_grad, _ = dense_backward(fc1, cache["input"], d_pre)
    grads[f"{prefix}_fc1.weight"] = w1_grad
    grads[f"{prefix}_fc1.bias"] = b1_grad
    grads[f"{prefix}_fc2.weight"] = w2_grad
    grads[f"{prefix}_fc2.bias"] = b2_grad


def batch_loss(
    model: AlignmentModel,
    images: np.ndarray,
    audio: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    *,
    training: bool = False,
    rng: RngStream | None = None,
) -> LossBreakdown:
    """Composite loss and exact gradients over one batch of paired embeddings.

    The reduction is the arithmetic mean over the batch of the per-pair
    alignment term and the per-pair sum of both modalities' cross-entropies.
    Input embeddings are consumed, never updated.
    """
    images = np.asarray(images, dtype=np.float64)
    audio = np.asarray(audio, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if images.ndim != 2 or audio.ndim != 2 or images.shape != audio.shape:
        raise ValueError(
            f"image/audio batches must be 2-D with equal shapes, got "
            f"{images.shape} and {audio.shape}"
        )
    n = images.shape[0]
    if n == 0:
        raise ValueError("batch must be non-empty")
    if labels.shape != (n,):
        raise ValueError("labels must be one class index per pair")

    joint_img, cache_img = _head_forward(
        model.image_projector, images, training, config.dropout_rate, rng
    )
    joint_aud, cache_aud = _head_forward(
        model.audio_projector, audio, training, config.dropout_rate, rng
    )
    diff = joint_img - joint_aud
    align = float((diff * diff).sum(axis=1).mean())

    logits_img = dense_forward(model.classifier, joint_img)
    logits_aud = dense_forward(model.classifier, joint_aud)
    ce_img, dlogits_img = softmax_cross_entropy_rows(logits_img, labels)
    ce_aud, dlogits_aud = softmax_cross_entropy_rows(logits_aud, labels)
    cls = float((ce_img + ce_aud).mean())
    total = config.align_weight * align + config.cls_weight * cls

    grads: dict[str, np.ndarray] = {}
    dlogits_img *= config.cls_weight / n
    dlogits_aud *= config.cls_weight / n
    wc_img, bc_img, d_joint_img_cls = dense_backward(model.classifier, joint_img, dlogits_img)
    wc_aud, bc_aud, d_joint_aud_cls = dense_backward(model.classifier, joint_aud, dlogits_aud)
    grads["classifier.weight"] = wc_img + wc_aud
    grads["classifier.bias"] = bc_img + bc_aud

    d_align = (2.0 * config.align_weight / n) * diff
    _head_backward(model.image_projector, cache_img, d_align + d_joint_img_cls, "image", grads)
    _head_backward(model.audio_projector, cache_aud, -d_align + d_joint_aud_cls, "audio", grads)
    grads = {name: grads[name] for name in model.parameters()}  # parameter order
    return LossBreakdown(total=total, align=align, cls=cls, grads=grads)


@dataclass
class TrainReport:
    """Per-epoch training history plus the selected checkpoint's identity."""

    train_loss: list[float] = field(default_factory=list)
    align_loss: list[float] = field(default_factory=list)
    cls_loss: list[float] = field(default_factory=list)
    val_map: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    final_checksum: str = ""

    def to_json_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "align_loss": self.align_loss,
            "cls_loss": self.cls_loss,
            "val_map": self.val_map,
            "best_epoch": self.best_epoch,
            "final_checksum": self.final_checksum,
        }


def _validation_map(model: AlignmentModel, pairs: PairedEmbeddings) -> float:
    from . import metrics, retrieval

    joint_img = project_image(model, pairs.image)
    joint_aud = project_audio(model, pairs.audio)
    i2a = retrieval.rank_matrix(
        joint_img, pairs.image_ids, pairs.labels,
        joint_aud, pairs.audio_ids, pairs.labels, retrieval.I2A,
    )
    a2i = retrieval.rank_matrix(
        joint_aud, pairs.audio_ids, pairs.labels,
        joint_img, pairs.image_ids, pairs.labels, retrieval.A2I,
    )
    return (metrics.evaluate(i2a)["mAP"] + metrics.evaluate(a2i)["mAP"]) / 2.0


def train(
    train_pairs: PairedEmbeddings,
    val_pairs: PairedEmbeddings,
    config: TrainConfig,
    dims: ModelDims | None = None,
    initial: AlignmentModel | None = None,
) -> tuple[AlignmentModel, TrainReport]:
    """Optimize the heads with AdamW and return the best-validation checkpoint.

    Each epoch reshuffles the training pairs with the seeded stream, walks
    mini-batches (final partial batch kept), and then scores the validation
    split by the mean of image-to-audio and audio-to-image mAP with dropout
    off. Training stops at ``max_epochs`` or once ``patience`` consecutive
    epochs fail to improve the best validation score. Deterministic per seed.
    ``initial`` warm-starts from an existing model instead of a fresh init.
    """
    config.validate()
    if len(train_pairs) == 0:
        raise ValueError("training set is empty")
    if dims is None:
        dims = ModelDims(input_dim=train_pairs.dim, class_count=train_pairs.class_count)
    if dims.input_dim != train_pairs.dim or dims.input_dim != val_pairs.dim:
        raise ValueError("model input_dim does not match the embedding packs")
    if train_pairs.class_count != val_pairs.class_count:
        raise ValueError("train and val packs disagree on class vocabulary")
    if train_pairs.labels.size and train_pairs.labels.max() >= dims.class_count:
        raise ValueError("class labels exceed the classifier width")

    if initial is not None:
        if initial.dims != dims:
            raise ValueError(f"warm-start model dims {initial.dims} do not match {dims}")
        model = initial.copy()
    else:
        model = init_model(dims, config.seed)
    params = model.parameters()
    opt_state = AdamWState.for_params(params)
    rng = RngStream(config.seed, counter=_TRAIN_COUNTER_OFFSET)
    report = TrainReport()
    best_map = -np.inf
    best_params: dict[str, np.ndarray] | None = None
    stale_epochs = 0
    n = len(train_pairs)

    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        loss_sum = align_sum = cls_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            result = batch_loss(
                model,
                train_pairs.image[idx],
                train_pairs.audio[idx],
                train_pairs.labels[idx],
                config,
                training=True,
                rng=rng,
            )
            adamw_step(
                params,
                result.grads,
                opt_state,
                lr=config.lr,
                weight_decay=config.weight_decay,
            )
            loss_sum += result.total * len(idx)
            align_sum += result.align * len(idx)
            cls_sum += result.cls * len(idx)
        report.train_loss.append(loss_sum / n)
        report.align_loss.append(align_sum / n)
        report.cls_loss.append(cls_sum / n)

        val_map = _validation_map(model, val_pairs)
        report.val_map.append(val_map)
        if val_map > best_map:
            best_map = val_map
            report.best_epoch = epoch
            best_params = {name: arr.copy() for name, arr in params.items()}
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= config.patience:
                break

    if best_params is not None:
        for name, arr in params.items():
            arr[...] = best_params[name]
    report.final_checksum = f"{model.checksum():016x}"
    return model, report


# ---------------------------------------------------------------------------
# Checkpoint persistence: <stem>.manifest.json + <stem>.blob (raw f64 bytes)

def save_checkpoint(model: AlignmentModel, stem: str | Path) -> None:
    """Write the manifest-plus-blob checkpoint; float64, bit-exact round-trip."""
    stem = str(stem)
    tensors = []
    blob = bytearray()
    for name, arr in model.parameters().items():
        tensors.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": "f64",
                "byte_offset": len(blob),
            }
        )
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    manifest = {"tensors": tensors, "checksum_fnv1a64": f"{fnv1a_64(bytes(blob)):016x}"}
    Path(stem + ".manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )
    Path(stem + ".blob").write_bytes(bytes(blob))


_EXPECTED_TENSORS = (
    "image_fc1.weight", "image_fc1.bias", "image_fc2.weight", "image_fc2.bias",
    "audio_fc1.weight", "audio_fc1.bias", "audio_fc2.weight", "audio_fc2.bias",
    "classifier.weight", "classifier.bias",
)


def load_checkpoint(stem: str | Path) -> AlignmentModel:
    """Load a checkpoint, verifying checksum, names, shapes and offsets."""
    stem = str(stem)
    manifest_path = Path(stem + ".manifest.json")
    blob_path = Path(stem + ".blob")
    if not manifest_path.exists() or not blob_path.exists():
        raise CheckpointError(f"missing checkpoint file for stem '{stem}'")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        tensors = manifest["tensors"]
        stored_sum = manifest["checksum_fnv1a64"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt manifest {manifest_path}: {exc}") from exc
    blob = blob_path.read_bytes()
    if f"{fnv1a_64(blob):016x}" != stored_sum:
        raise CheckpointError(f"checksum mismatch for {blob_path}")

    arrays: dict[str, np.ndarray] = {}
    cursor = 0
    for entry in tensors:
        name, shape, dtype, offset = (
            entry["name"], tuple(entry["shape"]), entry["dtype"], entry["byte_offset"],
        )
        if dtype != "f64":
            raise CheckpointError(f"tensor '{name}': unsupported dtype {dtype!r}")
        if offset != cursor:
            raise CheckpointError(f"tensor '{name}': byte_offset {offset} != expected {cursor}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + count * 8
        if end > len(blob):
            raise CheckpointError(f"tensor '{name}': blob too short for shape {shape}")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        cursor = end
    if cursor != len(blob):
        raise CheckpointError(f"blob has {len(blob) - cursor} trailing bytes beyond the manifest")
    if tuple(arrays) != _EXPECTED_TENSORS:
        raise CheckpointError(
            f"manifest tensors {tuple(arrays)} do not match the expected layout"
        )

    dims = ModelDims(
        input_dim=arrays["image_fc1.weight"].shape[1],
        hidden_dim=arrays["image_fc1.weight"].shape[0],
        joint_dim=arrays["image_fc2.weight"].shape[0],
        class_count=arrays["classifier.weight"].shape[0],
    )
    try:
        return AlignmentModel(
            (
                DenseLayer(arrays["image_fc1.weight"], arrays["image_fc1.bias"]),
                DenseLayer(arrays["image_fc2.weight"], arrays["image_fc2.bias"]),
            ),
            (
                DenseLayer(arrays["audio_fc1.weight"], arrays["audio_fc1.bias"]),
                DenseLayer(arrays["audio_fc2.weight"], arrays["audio_fc2.bias"]),
            ),
            DenseLayer(arrays["classifier.weight"], arrays["classifier.bias"]),
            dims,
        )
    except ValueError as exc:
        raise CheckpointError(f"inconsistent tensor shapes: {exc}") from exc
