"""Synthetic two-class dataset and an SGD smoke-training harness.

The dataset is deliberately easy: a bright 5x5 blob in the left half of a
16x16 single-channel image for class 0, right half for class 1, plus Gaussian
noise. A hand-written centroid rule already separates it, so any network that
fails to learn it has a broken gradient path, which is the point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import Network, NetworkSpec, build_network
from .tensor import Tensor4

__all__ = ["ToyDataset", "TrainResult", "TrainingDiverged", "make_toy_dataset",
           "centroid_accuracy", "softmax_cross_entropy", "train_smoke",
           "evaluate_accuracy", "loss_curve_csv"]

_SIDE = 16
_BLOB = 5
_BLOB_AMPLITUDE = 3.0
_NOISE_SIGMA = 0.1


@dataclass(frozen=True)
class ToyDataset:
    images: np.ndarray          # (n, 1, 16, 16) float64
    labels: np.ndarray          # (n,) int64 in {0, 1}
    seed: int


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


def make_toy_dataset(n: int, seed: int) -> ToyDataset:
    """Deterministic per seed; labels alternate so classes balance exactly."""
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    rng = np.random.default_rng(seed)
    half = _BLOB // 2
    images = rng.normal(0.0, _NOISE_SIGMA, size=(n, 1, _SIDE, _SIDE))
    labels = np.arange(n, dtype=np.int64) % 2
    for i in range(n):
        cy = rng.integers(half, _SIDE - half)
        if labels[i] == 0:
            cx = rng.integers(half, _SIDE // 2 - half)
        else:
            cx = rng.integers(_SIDE // 2 + half, _SIDE - half)
        images[i, 0, cy - half:cy + half + 1, cx - half:cx + half + 1] += _BLOB_AMPLITUDE
    return ToyDataset(images, labels, seed)


def centroid_accuracy(ds: ToyDataset) -> float:
    """Mean-pixel left-vs-right rule; the independent sanity bar for the
    dataset itself."""
    left = ds.images[:, 0, :, :_SIDE // 2].mean(axis=(1, 2))
    right = ds.images[:, 0, :, _SIDE // 2:].mean(axis=(1, 2))
    pred = (right > left).astype(np.int64)
    return float(np.mean(pred == ds.labels))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and d(loss)/d(logits); numerically stabilised."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    logprob = shifted - logsumexp
    loss = -float(np.mean(logprob[np.arange(n), labels]))
    probs = np.exp(logprob)
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass
class TrainResult:
    final_accuracy: float
    curve: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.curve)


def evaluate_accuracy(net: Network, ds: ToyDataset) -> float:
    logits = net.forward(Tensor4(ds.images)).arr.reshape(len(ds.labels), -1)
    return float(np.mean(np.argmax(logits, axis=1) == ds.labels))


def train_smoke(spec: NetworkSpec, dataset: ToyDataset, steps: int = 200,
                lr: float = 0.05, momentum: float = 0.9,
                batch_size: int = 32, seed: int = 0) -> TrainResult:
    """SGD with momentum on softmax cross-entropy; deterministic given
    (spec seed, dataset seed, shuffle seed)."""
    if spec.classes != 2:
        raise ValueError(f"toy training expects 2 classes, spec has "
                         f"{spec.classes}")
    net = build_network(spec)
    slots = list(net.param_items())
    velocity = {name: np.zeros_like(block.params[local])
                for name, block, local in slots}
    rng = np.random.default_rng(seed)
    n = len(dataset.labels)
    batch_size = min(batch_size, n)
    order = rng.permutation(n)
    cursor = 0
    result = TrainResult(0.0)
    for step in range(steps):
        if cursor + batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor:cursor + batch_size]
        cursor += batch_size
        x = Tensor4(dataset.images[idx])
        yb = dataset.labels[idx]
        out, tapes = net.forward_tape(x)
        logits = out.arr.reshape(len(idx), -1)
        loss, dlogits = softmax_cross_entropy(logits, yb)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        acc = float(np.mean(np.argmax(logits, axis=1) == yb))
        result.curve.append((step, loss, acc))
        _, grads = net.backward(tapes, Tensor4(dlogits.reshape(out.shape)))
        for name, block, local in slots:
            g = grads.get(name)
            if g is None:
                continue
            v = velocity[name]
            v *= momentum
            v -= lr * g
            block.params[local] = block.params[local] + v
    result.final_accuracy = evaluate_accuracy(net, dataset)
    return result


def loss_curve_csv(result: TrainResult) -> str:
    lines = ["step,loss,accuracy"]
    for step, loss, acc in result.curve:
        lines.append(f"{step},{loss:.10g},{acc:.6g}")
    return "\n".join(lines) + "\n"
