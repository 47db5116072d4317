"""Receptive-field analysis.

Analytic side: per-channel-group propagation of (receptive field, jump)
through block graphs using additive composition rf' = rf + (k-1)*jump,
jump' = jump*s. Pointwise mixing (and channel shuffle) merges the groups a
branch can see to their max rf; idle branches pass through untouched, which
is what makes monotonic same-side idle stacking freeze one group's field
while the transformed group keeps growing, and strict L/R alternation
advance both groups one depthwise at a time.

Empirical side: a sensitivity probe on fragments rebuilt with strictly
positive constant conv weights (so nothing cancels): perturb one input pixel
at a time and record whether a chosen output scalar moves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import Block, BlockConfig, build_block, idle_widths
from .network import NetworkSpec, _build_stem
from .tensor import Tensor4

__all__ = ["RFGroup", "RFState", "propagate_rf", "propagate_conv",
           "propagate_spec", "probe_rf", "build_positive_fragment",
           "fragment_forward"]


@dataclass(frozen=True)
class RFGroup:
    lo: int
    hi: int            # exclusive
    rf: int            # side length in input pixels
    jump: int          # cumulative stride product

    def __post_init__(self):
        if self.rf < 1 or self.jump < 1 or self.lo >= self.hi:
            raise ValueError(f"degenerate receptive-field group {self}")


@dataclass(frozen=True)
class RFState:
    groups: tuple[RFGroup, ...]

    def __post_init__(self):
        pos = 0
        for g in self.groups:
            if g.lo != pos:
                raise ValueError("groups must partition the channel range")
            pos = g.hi

    @classmethod
    def fresh(cls, channels: int) -> "RFState":
        return cls((RFGroup(0, channels, 1, 1),))

    @property
    def channels(self) -> int:
        return self.groups[-1].hi

    @property
    def jump(self) -> int:
        return self.groups[0].jump

    def max_rf(self) -> int:
        return max(g.rf for g in self.groups)

    def group_of(self, channel: int) -> RFGroup:
        for g in self.groups:
            if g.lo <= channel < g.hi:
                return g
        raise ValueError(f"channel {channel} outside [0, {self.channels})")


def _canonical(groups: list[RFGroup]) -> tuple[RFGroup, ...]:
    merged: list[RFGroup] = []
    for g in groups:
        if merged and merged[-1].rf == g.rf and merged[-1].jump == g.jump:
            merged[-1] = RFGroup(merged[-1].lo, g.hi, g.rf, g.jump)
        else:
            merged.append(g)
    return tuple(merged)


def _split_at(groups: tuple[RFGroup, ...], b: int):
    left, right = [], []
    for g in groups:
        if g.hi <= b:
            left.append(g)
        elif g.lo >= b:
            right.append(g)
        else:
            left.append(RFGroup(g.lo, b, g.rf, g.jump))
            right.append(RFGroup(b, g.hi, g.rf, g.jump))
    return left, right


def propagate_conv(state: RFState, k: int, s: int,
                   out_channels: int | None = None) -> RFState:
    """Full convolution (or stem): merges every group, then composes."""
    c = out_channels if out_channels is not None else state.channels
    j = state.jump
    rf = state.max_rf() + (k - 1) * j
    return RFState((RFGroup(0, c, rf, j * s),))


def propagate_rf(state: RFState, cfg: BlockConfig) -> RFState:
    """Advance the per-group state through one block."""
    if state.channels != cfg.cin:
        raise ValueError(f"state covers {state.channels} channels, block "
                         f"expects {cfg.cin}")
    j = state.jump
    if cfg.kind in ("MBBlock", "Bottleneck", "ShuffleV1", "ShuffleV2"):
        # Pointwise mixing (or the exit shuffle) sees every input group.
        rf = state.max_rf() + (cfg.k - 1) * j
        return RFState((RFGroup(0, cfg.cout, rf, j * cfg.s),))
    if cfg.kind in ("IdleL", "IdleR", "ISB"):
        idle, active = idle_widths(cfg.cin, cfg.alpha)
        boundary = active if cfg.kind in ("IdleL", "ISB") else idle
        left, right = _split_at(state.groups, boundary)
        if cfg.kind in ("IdleL", "ISB"):
            act_side, idle_side = left, right
        else:
            idle_side, act_side = left, right
        rf_active = max(g.rf for g in act_side) + (cfg.k - 1) * j
        lo = min(g.lo for g in act_side)
        hi = max(g.hi for g in act_side)
        act_group = RFGroup(lo, hi, rf_active, j)
        if cfg.kind in ("IdleL", "ISB"):
            groups = [act_group] + idle_side
        else:
            groups = idle_side + [act_group]
        out = _canonical(groups)
        if cfg.kind == "ISB":
            # Exit shuffle: information-exchange, merge to the max.
            rf = max(g.rf for g in out)
            return RFState((RFGroup(0, cfg.cout, rf, j),))
        return RFState(out)
    raise ValueError(f"unknown block kind {cfg.kind!r}")


def propagate_spec(spec: NetworkSpec) -> RFState:
    """Analytic state at the end of the spec's block stack (stem included)."""
    state = RFState.fresh(spec.input_c)
    state = propagate_conv(state, spec.stem.k, spec.stem.s, spec.stem.out)
    for cfg in spec.blocks:
        state = propagate_rf(state, cfg)
    return state


def _positivize(block: Block, weight: float) -> None:
    for st in block.steps:
        if st.op == "conv":
            w = block.params[st.params[0]]
            block.params[st.params[0]] = np.full(w.shape, weight)
        elif st.op == "affine":
            c = block.params[st.params[0]].shape[0]
            block.params[st.params[0]] = np.ones(c)
            block.params[st.params[1]] = np.zeros(c)


def build_positive_fragment(cfgs_or_spec, weight: float = 0.5) -> list[Block]:
    """Build a block stack (optionally with a spec's stem first) whose conv
    weights are one positive constant, so no sensitivity can cancel.

    SE is rejected: its global pooling makes every pixel influential.
    """
    if isinstance(cfgs_or_spec, NetworkSpec):
        spec = cfgs_or_spec
        blocks = [_build_stem(spec)]
        cfgs = spec.blocks
    else:
        blocks = []
        cfgs = cfgs_or_spec
    for cfg in cfgs:
        if cfg.se:
            raise ValueError("receptive-field probe requires SE-free blocks")
        blocks.append(build_block(cfg))
    for b in blocks:
        _positivize(b, weight)
    return blocks


def fragment_forward(blocks: list[Block], x: Tensor4) -> Tensor4:
    for b in blocks:
        x = b.forward(x)
    return x


def probe_rf(fragment: list[Block], in_channels: int, h: int, w: int,
             out_channel: int, out_pos: tuple[int, int],
             delta: float = 1.0, tol: float = 1e-12,
             chunk: int = 128) -> int:
    """Measured square extent of the input region that moves one output
    scalar.

    Perturbs every input pixel (all channels at once, by +delta over a zero
    baseline) and returns the bounding-box side of the pixels whose effect on
    fragment(...)[0, out_channel, out_pos] exceeds `tol`. Perturbations are
    batched; samples never interact.
    """
    oh, ow = out_pos
    y0 = fragment_forward(fragment, Tensor4.zeros(1, in_channels, h, w))
    if not (0 <= out_channel < y0.c and 0 <= oh < y0.h and 0 <= ow < y0.w):
        raise ValueError(f"output index ({out_channel}, {oh}, {ow}) out of "
                         f"range for shape {y0.shape}")
    base = y0.arr[0, out_channel, oh, ow]
    npix = h * w
    sensitive = np.zeros(npix, dtype=bool)
    for start in range(0, npix, chunk):
        idx = np.arange(start, min(start + chunk, npix))
        batch = np.zeros((len(idx), in_channels, h, w))
        batch[np.arange(len(idx)), :, idx // w, idx % w] = delta
        y = fragment_forward(fragment, Tensor4(batch))
        sensitive[idx] = np.abs(y.arr[:, out_channel, oh, ow] - base) > tol
    if not sensitive.any():
        return 0
    rows = np.nonzero(sensitive)[0] // w
    cols = np.nonzero(sensitive)[0] % w
    return int(max(rows.max() - rows.min(), cols.max() - cols.min()) + 1)
