"""Minimal dense-network kernel: layers, losses, AdamW, gradient checking.

Everything works on float64 numpy arrays, batches are 2-D ``(batch, width)``,
and there is deliberately no autodiff graph: every operation ships its own
analytic backward pass, verified against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

_MASK64 = (1 << 64) - 1


class RngStream:
    """Deterministic random stream backed by counter-keyed Philox.

    Each draw builds a generator from the 128-bit key ``(seed, counter)`` and
    then bumps the counter, so the stream state is fully described by two
    64-bit integers and the sample sequence is identical on every platform
    numpy supports.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter) & _MASK64

    def _next(self) -> np.random.Generator:
        gen = np.random.Generator(np.random.Philox(key=[self.seed, self.counter]))
        self.counter = (self.counter + 1) & _MASK64
        return gen

    def normal(self, shape: int | tuple[int, ...] = ()) -> np.ndarray:
        """Standard-normal draw of the given shape."""
        return self._next().standard_normal(shape)

    def uniform(self, low: float, high: float, shape: int | tuple[int, ...] = ()) -> np.ndarray:
        return self._next().uniform(low, high, shape)

    def random(self, shape: int | tuple[int, ...] = ()) -> np.ndarray:
        """Uniform draw on [0, 1)."""
        return self._next().random(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._next().permutation(n)


def _as_batch(x: np.ndarray, width: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{what} must be a 2-D batch, got shape {x.shape}")
    if x.shape[1] != width:
        raise ValueError(f"{what} width {x.shape[1]} does not match expected {width}")
    return x


class DenseLayer:
    """Affine map ``x -> x @ weights.T + bias``; weights have shape (out_dim, in_dim)."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weights.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {weights.shape}")
        if bias.ndim != 1 or bias.shape[0] != weights.shape[0]:
            raise ValueError(
                f"bias shape {bias.shape} does not match weights shape {weights.shape}"
            )
        if not (np.isfinite(weights).all() and np.isfinite(bias).all()):
            raise ValueError("layer parameters must be finite")
        self.weights = weights
        self.bias = bias

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy())


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Batched affine transform, ``(B, in_dim) -> (B, out_dim)``."""
    x = _as_batch(x, layer.in_dim, "dense input")
    return x @ layer.weights.T + layer.bias


def dense_backward(
    layer: DenseLayer, x: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic gradients of :func:`dense_forward`.

    Returns ``(weight_grad, bias_grad, input_grad)`` where the weight gradient
    is ``upstream.T @ x`` and the bias gradient sums upstream over the batch.
    """
    x = _as_batch(x, layer.in_dim, "dense input")
    upstream = _as_batch(upstream, layer.out_dim, "upstream gradient")
    if upstream.shape[0] != x.shape[0]:
        raise ValueError("batch sizes of input and upstream gradient differ")
    weight_grad = upstream.T @ x
    bias_grad = upstream.sum(axis=0)
    input_grad = upstream @ layer.weights
    return weight_grad, bias_grad, input_grad


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise ``max(0, x)``."""
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Mask upstream where the forward input was <= 0."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape != upstream.shape:
        raise ValueError("input and upstream shapes differ")
    return upstream * (x > 0.0)


def dropout(
    x: np.ndarray,
    rate: float,
    rng: RngStream | None = None,
    training: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout.

    Training mode zeroes each unit independently with probability ``rate`` and
    scales survivors by ``1 / (1 - rate)``, so the output matches the input in
    expectation. Inference mode is the identity. Returns ``(output, mask)``
    where the mask already carries the survivor scaling, i.e. the backward
    pass is ``upstream * mask``.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if not training or rate == 0.0:
        return x, np.ones_like(x)
    if rng is None:
        raise ValueError("training-mode dropout requires an RngStream")
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


def softmax_cross_entropy_rows(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise stable softmax cross-entropy.

    ``logits`` is ``(B, C)``, ``labels`` is ``(B,)`` of class indices.
    Returns per-row losses ``(B,)`` and logit gradients ``(B, C)``
    (``softmax - one_hot``, not yet averaged over the batch).
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError(f"logits must be 2-D, got shape {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ValueError("labels must be one class index per logits row")
    n_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1)
    probs = exp / total[:, None]
    rows = np.arange(logits.shape[0])
    losses = np.log(total) - shifted[rows, labels]
    grads = probs
    grads[rows, labels] -= 1.0
    return losses, grads


def softmax_cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Loss ``-log softmax(logits)[label]`` plus its logit gradient, for one vector."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ValueError(f"logits must be 1-D, got shape {logits.shape}")
    losses, grads = softmax_cross_entropy_rows(logits[None, :], np.asarray([label]))
    return float(losses[0]), grads[0]


def pair_alignment_loss(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Squared Euclidean distance between two vectors, with both gradients."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"vectors must be 1-D of equal length, got {a.shape} and {b.shape}")
    diff = a - b
    loss = float(diff @ diff)
    return loss, 2.0 * diff, -2.0 * diff


@dataclass
class AdamWState:
    """First/second-moment buffers plus the step counter for :func:`adamw_step`."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamWState":
        return cls(
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
            t=0,
        )


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    *,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place AdamW update with bias correction.

    Decoupled weight decay is applied only to parameters with ndim >= 2
    (weight matrices), never to biases. Aborts on non-finite gradients.
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ValueError("params, grads and optimizer state must share the same names")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for '{name}'")
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient for '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = lr * ((m / bc1) / (np.sqrt(v / bc2) + eps))
        if weight_decay != 0.0 and p.ndim >= 2:
            update = update + lr * weight_decay * p
        p -= update


def grad_check(
    loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    params: np.ndarray,
    h: float = 1e-6,
) -> float:
    """Maximum relative error between analytic and central-difference gradients.

    ``loss_fn`` maps a flat parameter vector to ``(loss, gradient)`` and must
    be deterministic (dropout off). Coordinates where both gradients are
    below 1e-12 in combined magnitude are skipped.
    """
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1:
        raise ValueError("grad_check expects a flat parameter vector")
    _, analytic = loss_fn(params)
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.empty_like(params)
    for i in range(params.size):
        plus = params.copy()
        plus[i] += h
        minus = params.copy()
        minus[i] -= h
        numeric[i] = (loss_fn(plus)[0] - loss_fn(minus)[0]) / (2.0 * h)
    denom = np.abs(analytic) + np.abs(numeric)
    mask = denom > 1e-12
    if not mask.any():
        return 0.0
    return float((np.abs(analytic - numeric)[mask] / denom[mask]).max())
