"""Tensor operations: convolution, channel plumbing, elementwise maps, pooling
and dense layers, each paired with its exact reverse-mode derivative.

All ops are pure functions over Tensor4 values. Convolutions and dense layers
report their multiply-accumulate count to an ExecContext using the closed
form for the call (one increment per call); permutation and elementwise ops
are free. Gradient functions never touch the counter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .tensor import ExecContext, Tensor4

__all__ = [
    "ConvParams", "conv2d", "conv2d_vjp",
    "split_channels", "split_channels_vjp",
    "concat_channels", "concat_channels_vjp",
    "channel_shuffle", "channel_shuffle_vjp",
    "affine_channel", "affine_channel_vjp",
    "activation", "activation_vjp",
    "add", "add_vjp",
    "global_avg_pool", "global_avg_pool_vjp",
    "dense", "dense_vjp",
    "mul_channel_gate", "mul_channel_gate_vjp",
    "conv_mac_count", "dense_mac_count", "vjp",
]

ACTIVATION_KINDS = ("relu", "relu6", "hswish", "identity", "hsigmoid")


@dataclass(frozen=True)
class ConvParams:
    """Square-kernel 2-D convolution parameters with "same" zero padding.

    Depthwise convolution is the case groups == in_channels == out_channels.
    """

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    groups: int = 1
    weights: np.ndarray = field(default=None, repr=False)
    padding: int = None

    def __post_init__(self):
        k = self.kernel
        if k < 1 or k % 2 == 0:
            raise ValueError(f"kernel must be odd and >= 1, got {k}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.groups < 1:
            raise ValueError(f"groups must be >= 1, got {self.groups}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(
                f"channels ({self.in_channels} -> {self.out_channels}) must be "
                f"divisible by groups={self.groups}")
        pad = (k - 1) // 2
        if self.padding is None:
            object.__setattr__(self, "padding", pad)
        elif self.padding != pad:
            raise ValueError(f"padding must be (k-1)/2 = {pad}, got {self.padding}")
        w = self.weights
        if isinstance(w, Tensor4):
            w = w.arr
        expect = (self.out_channels, self.in_channels // self.groups, k, k)
        if w is None:
            w = np.zeros(expect, dtype=np.float64)
        w = np.ascontiguousarray(w, dtype=np.float64)
        if w.shape != expect:
            raise ValueError(f"weights shape {w.shape} != expected {expect}")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)


def conv_mac_count(n: int, c_in: int, c_out: int, k: int, s: int, g: int,
                   h: int, w: int) -> int:
    """MACs of one convolution call: n * c_out * h' * w' * (c_in/g) * k^2."""
    h2 = -(-h // s)
    w2 = -(-w // s)
    return n * c_out * h2 * w2 * (c_in // g) * k * k


def dense_mac_count(n: int, in_features: int, out_features: int) -> int:
    return n * in_features * out_features


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x: Tensor4, p: ConvParams, ctx: ExecContext | None = None) -> Tensor4:
    """Correlation with zero "same" padding; output spatial size ceil(hw/s).

    The reduction per output element runs channel-major, then kernel row,
    then kernel column, in a fixed order regardless of backend or threads.
    """
    if x.c != p.in_channels:
        raise ValueError(f"input has {x.c} channels, conv expects {p.in_channels}")
    s = p.stride
    h2 = -(-x.h // s)
    w2 = -(-x.w // s)
    xpad = _pad(x.arr, p.padding)
    out = backend.kernels.conv2d_forward(
        xpad, p.weights, s, h2, w2, p.groups, backend.get_num_threads())
    if ctx is not None:
        ctx.add_macs(conv_mac_count(x.n, p.in_channels, p.out_channels,
                                    p.kernel, s, p.groups, x.h, x.w))
    return Tensor4._wrap(out)


def conv2d_vjp(x: Tensor4, p: ConvParams, cot: Tensor4) -> tuple[Tensor4, np.ndarray]:
    """Gradients (d_input, d_weights) of conv2d under cotangent `cot`."""
    s = p.stride
    h2 = -(-x.h // s)
    w2 = -(-x.w // s)
    if cot.shape != (x.n, p.out_channels, h2, w2):
        raise ValueError(f"cotangent shape {cot.shape} != output shape "
                         f"{(x.n, p.out_channels, h2, w2)}")
    nt = backend.get_num_threads()
    dx = backend.kernels.conv2d_backward_input(
        cot.arr, p.weights, s, p.padding, x.h, x.w, p.groups, nt)
    xpad = _pad(x.arr, p.padding)
    dw = backend.kernels.conv2d_backward_weights(
        cot.arr, xpad, s, p.in_channels // p.groups, p.kernel, p.groups, nt)
    return Tensor4._wrap(dx), dw


def split_channels(x: Tensor4, at: int) -> tuple[Tensor4, Tensor4]:
    """Slice channels [0, at) and [at, c) into two copied tensors."""
    if not 0 < at < x.c:
        raise ValueError(f"split index {at} out of range (0, {x.c})")
    return (Tensor4._wrap(x.arr[:, :at].copy()),
            Tensor4._wrap(x.arr[:, at:].copy()))


def split_channels_vjp(cot_a: Tensor4, cot_b: Tensor4) -> Tensor4:
    return concat_channels(cot_a, cot_b)


def concat_channels(a: Tensor4, b: Tensor4) -> Tensor4:
    """Channel concatenation, a's channels first."""
    if (a.n, a.h, a.w) != (b.n, b.h, b.w):
        raise ValueError(f"batch/spatial mismatch: {a.shape} vs {b.shape}")
    return Tensor4._wrap(np.concatenate([a.arr, b.arr], axis=1))


def concat_channels_vjp(cot: Tensor4, at: int) -> tuple[Tensor4, Tensor4]:
    return split_channels(cot, at)


def shuffle_permutation(c: int, g: int) -> np.ndarray:
    """Gather indices: output channel j reads input channel perm[j].

    The permutation is reshape-(g, c/g), transpose, flatten; for c=6, g=2 the
    output channel order is [0, 3, 1, 4, 2, 5].
    """
    if c % g:
        raise ValueError(f"channels {c} not divisible by groups {g}")
    return np.arange(c).reshape(g, c // g).T.reshape(-1)


def channel_shuffle(x: Tensor4, g: int) -> Tensor4:
    """Pure channel permutation (zero MACs)."""
    perm = shuffle_permutation(x.c, g)
    return Tensor4._wrap(np.ascontiguousarray(x.arr[:, perm]))


def channel_shuffle_vjp(cot: Tensor4, g: int) -> Tensor4:
    # Adjoint of a permutation is its inverse: shuffle with c/g groups.
    return channel_shuffle(cot, cot.c // g)


def affine_channel(x: Tensor4, scale: np.ndarray, bias: np.ndarray) -> Tensor4:
    """Per-channel y = scale[c] * x + bias[c] (inference-style folded norm)."""
    scale = np.asarray(scale, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if scale.shape != (x.c,) or bias.shape != (x.c,):
        raise ValueError(f"scale/bias must have length {x.c}, got "
                         f"{scale.shape}/{bias.shape}")
    out = x.arr * scale[None, :, None, None] + bias[None, :, None, None]
    return Tensor4._wrap(out)


def affine_channel_vjp(x: Tensor4, scale: np.ndarray, cot: Tensor4):
    if cot.shape != x.shape:
        raise ValueError("cotangent shape mismatch")
    scale = np.asarray(scale, dtype=np.float64)
    dx = Tensor4._wrap(cot.arr * scale[None, :, None, None])
    dscale = np.sum(cot.arr * x.arr, axis=(0, 2, 3))
    dbias = np.sum(cot.arr, axis=(0, 2, 3))
    return dx, dscale, dbias


def activation(x: Tensor4, kind: str) -> Tensor4:
    """Elementwise nonlinearity; hswish(x) = x * min(max(x+3, 0), 6) / 6."""
    a = x.arr
    if kind == "relu":
        out = np.maximum(a, 0.0)
    elif kind == "relu6":
        out = np.minimum(np.maximum(a, 0.0), 6.0)
    elif kind == "hswish":
        out = a * (np.minimum(np.maximum(a + 3.0, 0.0), 6.0) / 6.0)
    elif kind == "hsigmoid":
        out = np.minimum(np.maximum(a + 3.0, 0.0), 6.0) / 6.0
    elif kind == "identity":
        out = a.copy()
    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    return Tensor4._wrap(out)


def activation_vjp(x: Tensor4, kind: str, cot: Tensor4) -> Tensor4:
    if cot.shape != x.shape:
        raise ValueError("cotangent shape mismatch")
    a = x.arr
    if kind == "relu":
        d = (a > 0.0).astype(np.float64)
    elif kind == "relu6":
        d = ((a > 0.0) & (a < 6.0)).astype(np.float64)
    elif kind == "hswish":
        d = np.where(a <= -3.0, 0.0, np.where(a >= 3.0, 1.0, (2.0 * a + 3.0) / 6.0))
    elif kind == "hsigmoid":
        d = np.where((a > -3.0) & (a < 3.0), 1.0 / 6.0, 0.0)
    elif kind == "identity":
        d = 1.0
    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    return Tensor4._wrap(cot.arr * d)


def add(a: Tensor4, b: Tensor4) -> Tensor4:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return Tensor4._wrap(a.arr + b.arr)


def add_vjp(cot: Tensor4) -> tuple[Tensor4, Tensor4]:
    return cot, cot


def global_avg_pool(x: Tensor4) -> Tensor4:
    """Spatial mean per channel; output is (n, c, 1, 1)."""
    return Tensor4._wrap(np.mean(x.arr, axis=(2, 3), keepdims=True))


def global_avg_pool_vjp(x: Tensor4, cot: Tensor4) -> Tensor4:
    if cot.shape != (x.n, x.c, 1, 1):
        raise ValueError("cotangent shape mismatch")
    scale = 1.0 / (x.h * x.w)
    return Tensor4._wrap(np.broadcast_to(cot.arr * scale, x.shape).copy())


def dense(x: Tensor4, weights: np.ndarray, bias: np.ndarray | None,
          ctx: ExecContext | None = None) -> Tensor4:
    """Fully connected layer on (n, f, 1, 1) tensors.

    Accumulates over input features in ascending order (thread-independent).
    Counts in_features * out_features MACs per batch row.
    """
    if x.h != 1 or x.w != 1:
        raise ValueError(f"dense expects spatial size 1x1, got {x.h}x{x.w}")
    weights = np.asarray(weights, dtype=np.float64)
    out_f, in_f = weights.shape
    if x.c != in_f:
        raise ValueError(f"dense expects {in_f} features, got {x.c}")
    x2 = x.arr.reshape(x.n, in_f)
    acc = np.zeros((x.n, out_f), dtype=np.float64)
    for i in range(in_f):
        acc += x2[:, i:i + 1] * weights[None, :, i]
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (out_f,):
            raise ValueError(f"bias must have length {out_f}")
        acc = acc + bias[None, :]
    if ctx is not None:
        ctx.add_macs(dense_mac_count(x.n, in_f, out_f))
    return Tensor4._wrap(acc.reshape(x.n, out_f, 1, 1))


def dense_vjp(x: Tensor4, weights: np.ndarray, cot: Tensor4):
    """Gradients (d_input, d_weights, d_bias) of dense."""
    weights = np.asarray(weights, dtype=np.float64)
    out_f, in_f = weights.shape
    if cot.shape != (x.n, out_f, 1, 1):
        raise ValueError("cotangent shape mismatch")
    u = cot.arr.reshape(x.n, out_f)
    x2 = x.arr.reshape(x.n, in_f)
    dx = np.zeros((x.n, in_f), dtype=np.float64)
    for o in range(out_f):
        dx += u[:, o:o + 1] * weights[None, o, :]
    dw = np.zeros((out_f, in_f), dtype=np.float64)
    for b in range(x.n):
        dw += u[b][:, None] * x2[b][None, :]
    db = np.sum(u, axis=0)
    return Tensor4._wrap(dx.reshape(x.n, in_f, 1, 1)), dw, db


def mul_channel_gate(x: Tensor4, gate: Tensor4) -> Tensor4:
    """Multiply each channel by a per-sample scalar gate of shape (n, c, 1, 1)."""
    if gate.shape != (x.n, x.c, 1, 1):
        raise ValueError(f"gate shape {gate.shape} != {(x.n, x.c, 1, 1)}")
    return Tensor4._wrap(x.arr * gate.arr)


def mul_channel_gate_vjp(x: Tensor4, gate: Tensor4, cot: Tensor4):
    if cot.shape != x.shape:
        raise ValueError("cotangent shape mismatch")
    dx = Tensor4._wrap(cot.arr * gate.arr)
    dgate = Tensor4._wrap(np.sum(cot.arr * x.arr, axis=(2, 3), keepdims=True))
    return dx, dgate


_VJP_TABLE = {
    "conv2d": conv2d_vjp,
    "split_channels": split_channels_vjp,
    "concat_channels": concat_channels_vjp,
    "channel_shuffle": channel_shuffle_vjp,
    "affine_channel": affine_channel_vjp,
    "activation": activation_vjp,
    "add": add_vjp,
    "global_avg_pool": global_avg_pool_vjp,
    "dense": dense_vjp,
    "mul_channel_gate": mul_channel_gate_vjp,
}


def vjp(op: str, *args, **kwargs):
    """Dispatch to the reverse-mode derivative of a named op."""
    try:
        fn = _VJP_TABLE[op]
    except KeyError:
        raise ValueError(f"no vjp registered for op {op!r}") from None
    return fn(*args, **kwargs)
