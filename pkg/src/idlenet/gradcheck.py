"""Finite-difference verification of reverse-mode gradients for blocks and
whole networks.

The loss is the sum of squared outputs (label-free). Affine scales/biases are
jittered away from their 1/0 defaults before checking: exact-zero
pre-activations otherwise sit on relu kinks where central differences are
meaningless. The jitter is seeded, so reports are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import Block
from .network import Network
from .tensor import Tensor4

__all__ = ["GradCheckRow", "GradCheckReport", "grad_check"]


@dataclass
class GradCheckRow:
    name: str
    max_rel_err: float
    checked_entries: int


@dataclass
class GradCheckReport:
    rows: list[GradCheckRow] = field(default_factory=list)
    tol: float = 1e-5

    @property
    def max_rel_err(self) -> float:
        return max((r.max_rel_err for r in self.rows), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _param_slots(obj):
    if isinstance(obj, Network):
        return [(gname, block.params, local)
                for gname, block, local in obj.param_items()]
    if isinstance(obj, Block):
        return [(name, obj.params, name) for name in obj.params]
    raise TypeError(f"cannot grad-check {type(obj).__name__}")


def _input_for(obj, rng) -> Tensor4:
    if isinstance(obj, Network):
        c, h, w = obj.spec.input
    else:
        c, h, w = obj.config.cin, 6, 6
    return Tensor4(rng.uniform(-1.0, 1.0, size=(1, c, h, w)))


def _loss(obj, x: Tensor4) -> float:
    return float(np.sum(obj.forward(x).arr ** 2))


_KINKS = {"relu": (0.0,), "relu6": (0.0, 6.0), "hswish": (-3.0, 3.0),
          "hsigmoid": (-3.0, 3.0), "identity": ()}


def _min_kink_distance(obj, tapes) -> float:
    """Smallest distance of any activation input to a kink of its map."""
    if isinstance(obj, Network):
        pairs = zip((b for _, b in obj.elements), tapes)
    else:
        pairs = [(obj, tapes)]
    dist = np.inf
    for block, values in pairs:
        for st in block.steps:
            if st.op != "act":
                continue
            v = values[st.inputs[0]].arr
            for kink in _KINKS[st.attrs["kind"]]:
                dist = min(dist, float(np.min(np.abs(v - kink))))
    return dist


def grad_check(obj, seed: int = 0, eps: float = 1e-5, tol: float = 1e-5,
               entries_per_tensor: int = 8, jitter: bool = True,
               check_input: bool = True) -> GradCheckReport:
    """Central differences vs the analytic backward pass on a random
    subsample of each parameter tensor (and the input).

    Relative error uses max(|fd|, |analytic|, 1) as denominator. The default
    tolerance 1e-5 suits block/network graphs; individual ops are checked at
    1e-6 in their own tests. Jitter and input are redrawn until every
    activation input clears its nearest kink by a wide multiple of eps, so
    the quotients never straddle a non-differentiable point.
    """
    rng = np.random.default_rng(seed)
    slots = _param_slots(obj)
    baseline = {name: params[key].copy()
                for name, params, key in slots} if jitter else {}
    margin = 20.0 * eps
    for _ in range(64):
        if jitter:
            for name, params, key in slots:
                arr = baseline[name]
                if name.endswith(".scale"):
                    params[key] = arr + rng.uniform(-0.2, 0.2, arr.shape)
                elif name.endswith(".bias") or name.endswith(".b"):
                    params[key] = arr + rng.uniform(-0.3, 0.3, arr.shape)
        x = _input_for(obj, rng)
        y, tape = obj.forward_tape(x)
        if _min_kink_distance(obj, tape) > margin:
            break
    dx, grads = obj.backward(tape, Tensor4(2.0 * y.arr))

    report = GradCheckReport(tol=tol)
    for name, params, key in slots:
        arr = params[key]
        analytic = grads.get(name)
        if analytic is None:
            continue
        n_check = min(arr.size, entries_per_tensor)
        picks = rng.choice(arr.size, size=n_check, replace=False)
        worst = 0.0
        for fi in picks:
            orig = arr.flat[fi]
            arr.flat[fi] = orig + eps
            lp = _loss(obj, x)
            arr.flat[fi] = orig - eps
            lm = _loss(obj, x)
            arr.flat[fi] = orig
            fd = (lp - lm) / (2.0 * eps)
            an = analytic.flat[fi]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1.0))
        report.rows.append(GradCheckRow(name, worst, n_check))

    if check_input:
        xa = x.arr
        n_check = min(xa.size, entries_per_tensor)
        picks = rng.choice(xa.size, size=n_check, replace=False)
        worst = 0.0
        for fi in picks:
            bumped = xa.copy()
            bumped.flat[fi] += eps
            lp = _loss(obj, Tensor4(bumped))
            bumped.flat[fi] -= 2 * eps
            lm = _loss(obj, Tensor4(bumped))
            fd = (lp - lm) / (2.0 * eps)
            an = dx.arr.flat[fi]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1.0))
        report.rows.append(GradCheckRow("input", worst, n_check))
    return report
