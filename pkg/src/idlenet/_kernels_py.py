"""Pure-numpy convolution kernels (fallback backend).

Accumulation order is pinned so results are bitwise-reproducible and match
the compiled backend exactly: for every output element the reduction runs
channel-major, then kernel row, then kernel column, one fused term at a time.
The vectorisation below only batches that same scalar recurrence across
independent output elements, so the per-element float sequence is unchanged.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def conv2d_forward(xpad: np.ndarray, w: np.ndarray, stride: int, h_out: int,
                   w_out: int, groups: int, n_threads: int = 1) -> np.ndarray:
    """Correlate a zero-padded input with `w`.

    xpad: (n, c_in, h_pad, w_pad); w: (c_out, c_in/groups, k, k).
    `n_threads` is accepted for signature parity; this backend is serial.
    """
    n, c_in = xpad.shape[0], xpad.shape[1]
    c_out, c_in_g, k, _ = w.shape
    c_out_g = c_out // groups
    s = stride
    he = (h_out - 1) * s + 1
    we = (w_out - 1) * s + 1
    out = np.empty((n, c_out, h_out, w_out), dtype=np.float64)
    acc = np.empty((n, h_out, w_out), dtype=np.float64)
    for co in range(c_out):
        cbase = (co // c_out_g) * c_in_g
        acc[...] = 0.0
        for ci in range(c_in_g):
            plane = xpad[:, cbase + ci]
            wk = w[co, ci]
            for kh in range(k):
                rows = plane[:, kh:kh + he:s]
                for kw in range(k):
                    acc += rows[:, :, kw:kw + we:s] * wk[kh, kw]
        out[:, co] = acc
    return out


def conv2d_backward_input(cot: np.ndarray, w: np.ndarray, stride: int, pad: int,
                          h_in: int, w_in: int, groups: int,
                          n_threads: int = 1) -> np.ndarray:
    """Gradient w.r.t. the (unpadded) input.

    Scatter into padded coordinates, then crop. Per input element the
    contribution order is output-channel, kernel-row, kernel-col, matching
    the compiled backend's gather loop.
    """
    n, c_out, h_out, w_out = cot.shape
    c_in_g, k = w.shape[1], w.shape[2]
    c_in = c_in_g * groups
    c_out_g = c_out // groups
    s = stride
    he = (h_out - 1) * s + 1
    we = (w_out - 1) * s + 1
    dxpad = np.zeros((n, c_in, h_in + 2 * pad, w_in + 2 * pad), dtype=np.float64)
    for co in range(c_out):
        cbase = (co // c_out_g) * c_in_g
        u = cot[:, co]
        for ci in range(c_in_g):
            target = dxpad[:, cbase + ci]
            wk = w[co, ci]
            for kh in range(k):
                rows = target[:, kh:kh + he:s]
                for kw in range(k):
                    rows[:, :, kw:kw + we:s] += u * wk[kh, kw]
    return dxpad[:, :, pad:pad + h_in, pad:pad + w_in].copy()


def conv2d_backward_weights(cot: np.ndarray, xpad: np.ndarray, stride: int,
                            c_in_g: int, k: int, groups: int,
                            n_threads: int = 1) -> np.ndarray:
    """Gradient w.r.t. the weights; reduction over (batch, output pixels)."""
    n, c_out, h_out, w_out = cot.shape
    c_out_g = c_out // groups
    s = stride
    he = (h_out - 1) * s + 1
    we = (w_out - 1) * s + 1
    dw = np.empty((c_out, c_in_g, k, k), dtype=np.float64)
    for co in range(c_out):
        cbase = (co // c_out_g) * c_in_g
        u = cot[:, co]
        for ci in range(c_in_g):
            plane = xpad[:, cbase + ci]
            for kh in range(k):
                rows = plane[:, kh:kh + he:s]
                for kw in range(k):
                    dw[co, ci, kh, kw] = np.sum(u * rows[:, :, kw:kw + we:s])
    return dw
