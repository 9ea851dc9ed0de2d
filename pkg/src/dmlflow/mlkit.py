"""Numeric kernel: dense tensors, a small MLP, SGD with momentum, and
federated averaging, plus IDX dataset loading and shard partitioning.

Tensors are plain numpy arrays (float32 for parameters and images, int64
for labels, uint8 on the wire for raw image bytes). All kernels preserve
the dtype of their inputs so the same code can be driven in float64 for
numerical checks.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np


class MlkitError(Exception):
    pass


class IdxFormatError(MlkitError):
    """Raised for malformed IDX files: bad magic, count mismatch, truncation."""


class ModelMismatchError(MlkitError):
    """Raised when models with different architectures are combined."""


class TrainingDivergedError(MlkitError):
    """Raised when the loss becomes non-finite during training."""


@dataclass
class Hyperparams:
    """SGD settings. Defaults follow the reference experiment setup."""

    lr: float = 0.01
    momentum: float = 0.5
    batch_size: int = 64

    def __post_init__(self):
        if self.lr < 0 or not np.isfinite(self.lr):
            raise ValueError("lr must be a finite non-negative number")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class ModelParams:
    """Fully connected network parameters: weights[i] is (fan_in, fan_out)."""

    weights: list
    biases: list

    @property
    def arch(self):
        dims = [self.weights[0].shape[0]]
        dims += [w.shape[1] for w in self.weights]
        return tuple(dims)

    def to_tensors(self):
        """Flatten to the wire layout: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    @staticmethod
    def from_tensors(tensors):
        if len(tensors) < 2 or len(tensors) % 2:
            raise ModelMismatchError("expected an even, non-empty tensor list")
        weights = list(tensors[0::2])
        biases = list(tensors[1::2])
        for w, b in zip(weights, biases):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ModelMismatchError("tensor shapes do not form dense layers")
        return ModelParams(weights, biases)

    def copy(self):
        return ModelParams([w.copy() for w in self.weights],
                           [b.copy() for b in self.biases])

    def astype(self, dtype):
        return ModelParams([w.astype(dtype) for w in self.weights],
                           [b.astype(dtype) for b in self.biases])


def mlp_init(arch, seed, dtype=np.float32):
    """Create initial parameters.

    Weights are drawn uniformly from (-sqrt(1/fan_in), +sqrt(1/fan_in));
    biases start at zero. The same (arch, seed) pair always produces the
    same model, which the peer-to-peer scheme relies on.
    """
    if len(arch) < 2 or any(d < 1 for d in arch):
        raise ValueError("arch needs at least two positive layer sizes")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        bound = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return ModelParams(weights, biases)


def count_params(arch):
    return sum(i * o + o for i, o in zip(arch[:-1], arch[1:]))


def count_forward_flops(arch):
    """Multiply-accumulate FLOPs for one input sample: 2 per weight."""
    return sum(2 * i * o for i, o in zip(arch[:-1], arch[1:]))


def forward(params, x):
    """Logits for a batch. Hidden layers use ReLU, the output is linear."""
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i != last:
            h = np.maximum(h, 0)
    return h


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy loss and d(loss)/d(logits).

    The max is subtracted before exponentiation so the loss stays finite
    for logits up to +/-1e4 and beyond.
    """
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, np.finfo(probs.dtype).tiny))))
    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def backward(params, x, labels):
    """Loss and gradients for one batch, via hand-rolled backprop."""
    acts = [x]
    h = x
    last = len(params.weights) - 1
    pre = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0) if i != last else z
        acts.append(h)
    loss, delta = softmax_cross_entropy(acts[-1], labels)
    gw = [None] * len(params.weights)
    gb = [None] * len(params.biases)
    for i in range(last, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i].T) * (pre[i - 1] > 0)
    return loss, ModelParams(gw, gb)


def train_epochs(params, data, hyper, epochs, rng):
    """Run mini-batch SGD with classical momentum for `epochs` epochs.

    Velocity update: v <- momentum * v + grad; theta <- theta - lr * v.
    Velocities start at zero on every call. `rng` drives the per-epoch
    shuffle and is consumed in place, so a persistent generator gives a
    reproducible multi-round schedule.

    Returns new ModelParams; the input is not modified.
    """
    w = [a.copy() for a in params.weights]
    b = [a.copy() for a in params.biases]
    vw = [np.zeros_like(a) for a in w]
    vb = [np.zeros_like(a) for a in b]
    n = data.images.shape[0]
    cur = ModelParams(w, b)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            loss, grads = backward(cur, data.images[idx], data.labels[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError("non-finite loss during training")
            for i in range(len(w)):
                vw[i] = hyper.momentum * vw[i] + grads.weights[i]
                vb[i] = hyper.momentum * vb[i] + grads.biases[i]
                w[i] -= hyper.lr * vw[i]
                b[i] -= hyper.lr * vb[i]
    return cur


def evaluate(params, data):
    """Top-1 accuracy. Argmax ties resolve to the lowest class index."""
    logits = forward(params, data.images)
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred == data.labels))


def fedavg(models):
    """Elementwise arithmetic mean of the listed models, in listed order.

    Accumulation runs in float64 and the result is cast back to the dtype
    of the first model, so the outcome is deterministic and independent of
    how callers grouped the inputs.
    """
    if not models:
        raise ValueError("fedavg needs at least one model")
    arch = models[0].arch
    for m in models[1:]:
        if m.arch != arch:
            raise ModelMismatchError(f"architecture mismatch: {m.arch} vs {arch}")
    dtype = models[0].weights[0].dtype
    out_w, out_b = [], []
    for i in range(len(models[0].weights)):
        acc = np.zeros_like(models[0].weights[i], dtype=np.float64)
        for m in models:
            acc += m.weights[i]
        out_w.append((acc / len(models)).astype(dtype))
        acc = np.zeros_like(models[0].biases[i], dtype=np.float64)
        for m in models:
            acc += m.biases[i]
        out_b.append((acc / len(models)).astype(dtype))
    return ModelParams(out_w, out_b)


@dataclass
class Dataset:
    """Image batch: images are (n, d) float32 in [0,1], labels (n,) int64."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels disagree on sample count")

    def __len__(self):
        return self.images.shape[0]


_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def _open_binary(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx_images(path):
    with _open_binary(path) as f:
        head = f.read(16)
        if len(head) < 16:
            raise IdxFormatError(f"{path}: truncated header")
        magic, count, rows, cols = struct.unpack(">IIII", head)
        if magic != _IDX_IMAGES_MAGIC:
            raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}")
        raw = f.read(count * rows * cols)
        if len(raw) != count * rows * cols:
            raise IdxFormatError(f"{path}: truncated image payload")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)
    return pixels.astype(np.float32) / 255.0


def _read_idx_labels(path):
    with _open_binary(path) as f:
        head = f.read(8)
        if len(head) < 8:
            raise IdxFormatError(f"{path}: truncated header")
        magic, count = struct.unpack(">II", head)
        if magic != _IDX_LABELS_MAGIC:
            raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}")
        raw = f.read(count)
        if len(raw) != count:
            raise IdxFormatError(f"{path}: truncated label payload")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def load_idx(images_path, labels_path):
    """Load an IDX image/label pair (big-endian headers, uint8 payloads).

    Pixels are scaled by 1/255 into float32. Raises IdxFormatError on bad
    magic numbers, truncation, or an image/label count mismatch.
    """
    images = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    return Dataset(images, labels)


def partition(data, n, seed):
    """Split a dataset into n disjoint shards covering every sample.

    The sample order is shuffled once with the given seed, then cut into
    contiguous runs. When n does not divide the count, the first
    (count mod n) shards receive one extra sample.
    """
    if n < 1:
        raise ValueError("shard count must be >= 1")
    count = len(data)
    if n > count:
        raise ValueError(f"cannot split {count} samples into {n} shards")
    order = np.random.default_rng(seed).permutation(count)
    base, extra = divmod(count, n)
    shards = []
    pos = 0
    for i in range(n):
        size = base + (1 if i < extra else 0)
        idx = order[pos:pos + size]
        pos += size
        shards.append(Dataset(data.images[idx], data.labels[idx]))
    return shards


def synthetic_dataset(n, classes=10, dim=784, seed=0, spread=1.2):
    """Gaussian class blobs shaped like flattened images, for desk runs.

    Not a benchmark stand-in: this exists so the machinery can be driven
    end to end without external dataset files.
    """
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.5, 0.35, size=(classes, dim))
    labels = rng.integers(0, classes, size=n)
    images = centers[labels] + rng.normal(0.0, 0.35 / spread, size=(n, dim))
    return Dataset(np.clip(images, 0.0, 1.0).astype(np.float32),
                   labels.astype(np.int64))
