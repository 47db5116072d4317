"""Shared test oracles.

The conv oracle is a direct nested-loop summation with the pinned reduction
order (channel-major, then kernel row, then kernel column); production
kernels must match it bitwise. The finite-difference helper is the
independent check for every analytic gradient.
"""

import numpy as np
import pytest


def conv2d_oracle(x: np.ndarray, w: np.ndarray, stride: int,
                  groups: int) -> np.ndarray:
    """Direct summation, "same" zero padding, output ceil(h/s) x ceil(w/s)."""
    n, c_in, h, ww = x.shape
    c_out, c_in_g, k, _ = w.shape
    p = (k - 1) // 2
    h2 = -(-h // stride)
    w2 = -(-ww // stride)
    c_out_g = c_out // groups
    out = np.zeros((n, c_out, h2, w2))
    for b in range(n):
        for co in range(c_out):
            cbase = (co // c_out_g) * c_in_g
            for oh in range(h2):
                for ow in range(w2):
                    acc = 0.0
                    for ci in range(c_in_g):
                        for kh in range(k):
                            for kw in range(k):
                                ih = oh * stride - p + kh
                                iw = ow * stride - p + kw
                                if 0 <= ih < h and 0 <= iw < ww:
                                    acc = acc + x[b, cbase + ci, ih, iw] \
                                              * w[co, ci, kh, kw]
                    out[b, co, oh, ow] = acc
    return out


def central_difference(loss_fn, arr: np.ndarray, flat_index: int,
                       eps: float = 1e-5) -> float:
    """(L(theta+eps) - L(theta-eps)) / 2 eps on one entry of `arr` in place."""
    orig = arr.flat[flat_index]
    arr.flat[flat_index] = orig + eps
    lp = loss_fn()
    arr.flat[flat_index] = orig - eps
    lm = loss_fn()
    arr.flat[flat_index] = orig
    return (lp - lm) / (2.0 * eps)


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
