"""Deterministic dense numerics: RNG streams, activations, loss, SGD with momentum.

Everything here works on float64 numpy arrays and is bit-deterministic:
identical inputs give identical outputs on every run and platform. Matrices
are plain 2-D ``np.ndarray`` with dtype float64, row-major.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, InternalError


class RngStream:
    """Reproducible random stream with cheap, independent substreams.

    Built on the counter-based Philox generator, keyed by a SHA-256 digest of
    the integer seed and a label path. The same (seed, path) always produces
    the same sequence, on any platform, and substreams derived with different
    labels are statistically independent.
    """

    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        digest = hashlib.sha256(
            ("%d/" % self.seed + "/".join(self.path)).encode()
        ).digest()
        key = np.frombuffer(digest[:16], dtype="<u8")  # Philox takes a 128-bit key
        self.gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, *labels: str) -> "RngStream":
        """Derive an independent substream labelled by `labels`."""
        return RngStream(self.seed, self.path + tuple(str(l) for l in labels))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path!r})"


@dataclass
class MomentumBuffer:
    """Velocity accumulator for SGD with momentum; zero-initialized."""

    velocity: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "MomentumBuffer":
        return cls(velocity=np.zeros(n, dtype=np.float64))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit dimension check."""
    if a.ndim != 2 or b.ndim != 2:
        raise ConfigurationError(f"matmul expects 2-D arrays, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ConfigurationError(
            f"matmul dimension mismatch: {a.shape} x {b.shape}"
        )
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free for any x
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x: np.ndarray) -> np.ndarray:
    """Elementwise x * sigmoid(x)."""
    return x * sigmoid(x)


def silu_backward(x: np.ndarray) -> np.ndarray:
    """Derivative of silu: sigmoid(x) * (1 + x * (1 - sigmoid(x)))."""
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray) -> np.ndarray:
    return (x > 0.0).astype(np.float64)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax, stabilized by max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean NLL over the batch and its gradient w.r.t. the logits.

    The gradient is (softmax - one_hot) / batch_size, matching the mean
    reduction of the loss.
    """
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ConfigurationError(
            f"labels shape {labels.shape} does not match batch size {n}"
        )
    if labels.min() < 0 or labels.max() >= k:
        raise DataError(
            f"label out of range [0, {k}): min={labels.min()}, max={labels.max()}"
        )
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].sum() / n
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return float(loss), grad


def per_sample_nll(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample negative log-likelihood (no reduction); used by evaluation."""
    labels = np.asarray(labels)
    logp = log_softmax(logits)
    return -logp[np.arange(len(labels)), labels]


def sgd_momentum_step(
    params: np.ndarray,
    grads: np.ndarray,
    buf: MomentumBuffer,
    lr: float,
    momentum: float,
) -> np.ndarray:
    """In-place heavyweight-ball update: v <- m*v + g; w <- w - lr*v.

    No dampening, no Nesterov, no weight decay. Returns `params` for
    convenience; both `params` and `buf.velocity` are mutated.
    """
    if params.shape != grads.shape or params.shape != buf.velocity.shape:
        raise InternalError(
            f"sgd length mismatch: params {params.shape}, grads {grads.shape}, "
            f"velocity {buf.velocity.shape}"
        )
    buf.velocity *= momentum
    buf.velocity += grads
    params -= lr * buf.velocity
    return params
