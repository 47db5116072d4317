"""Closed-form MAdds and parameter counting, verified against the
instrumented execution oracle.

Internally MAdds = 2 * MACs (multiply and add counted separately), matching
the leading factor 2 of the block cost formulas. The published comparison
tables use the 1-MAC-per-MAdd convention instead; `to_table_millions`
converts. Residual adds, activations, per-channel affines, and SE gating
multiplies count zero; SE dense layers do count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import ops
from .blocks import (Block, BlockConfig, IDLE_KINDS, expanded_width,
                     idle_widths)
from .tensor import ExecContext, Tensor4

__all__ = [
    "madds_mbblock", "madds_idleblock", "idle_savings", "madds_generic",
    "block_madds", "network_cost", "CostReport", "CostRow",
    "to_table_millions", "CostVerificationError",
]


class CostVerificationError(RuntimeError):
    """Analytic and instrumented MAdds disagree."""


def _se_madds(c_e: int, reduction: int) -> int:
    hidden = max(1, c_e // reduction)
    return 2 * (c_e * hidden) + 2 * (hidden * c_e)


def madds_mbblock(c_in: int, c_out: int, r: float, k: int, s: int,
                  h: int, w: int, se: bool = False,
                  se_reduction: int = 4) -> int:
    """Inverted-residual cost: expand + depthwise + squeeze, one sample.

    2*C_in*(r*C_in)*HW + 2*(r*C_in)*k^2*H'W' + 2*(r*C_in)*C_out*H'W', with
    H'W' the strided output size; equals the ideal HW/s^2 form whenever the
    stride divides both extents.
    """
    e = expanded_width(c_in, r)
    hw = h * w
    hw2 = (-(-h // s)) * (-(-w // s))
    total = 2 * c_in * e * hw + 2 * e * k * k * hw2 + 2 * e * c_out * hw2
    if se:
        total += _se_madds(e, se_reduction)
    return total


def madds_idleblock(c: int, r: float, k: int, s: int, alpha: float,
                    h: int, w: int, se: bool = False,
                    se_reduction: int = 4) -> int:
    """Idle variant: only the pointwise terms shrink by (1 - alpha); the
    depthwise still runs at the full expanded width r*C."""
    e = expanded_width(c, r)
    _, active = idle_widths(c, alpha)
    hw = h * w
    hw2 = (-(-h // s)) * (-(-w // s))
    total = 2 * active * e * hw + 2 * e * k * k * hw2 + 2 * e * active * hw2
    if se:
        total += _se_madds(e, se_reduction)
    return total


def idle_savings(c: int, r: float, alpha: float, h: int, w: int,
                 s: int = 1) -> float:
    """MAdds saved by idling a same-shape inverted residual:
    2 * alpha * r * C^2 * (HW + HW/s^2)."""
    hw = h * w
    return 2.0 * alpha * r * c * c * (hw + hw / (s * s))


def madds_generic(block: Block, h: int, w: int, n: int = 1) -> int:
    """Walk a built block graph and sum per-op closed forms.

    Convolutions cost 2*n*C_out*h'*w'*(C_in/g)*k^2, dense layers
    2*n*in*out; permutation, affine, activation, pooling and residual ops
    cost zero.
    """
    dims = {0: (h, w)}
    total = 0
    for st in block.steps:
        a = st.attrs
        hw_in = dims[st.inputs[0]]
        if st.op == "conv":
            total += 2 * ops.conv_mac_count(n, a["cin"], a["cout"], a["k"],
                                            a["s"], a["groups"], *hw_in)
            s = a["s"]
            out_dims = (-(-hw_in[0] // s), -(-hw_in[1] // s))
        elif st.op == "dense":
            total += 2 * ops.dense_mac_count(n, a["in"], a["out"])
            out_dims = (1, 1)
        elif st.op == "gap":
            out_dims = (1, 1)
        else:
            out_dims = hw_in
        for slot in st.outputs:
            dims[slot] = out_dims
    return total


def block_madds(cfg: BlockConfig, h: int, w: int) -> int:
    """Closed-form cost of a block config (one sample) without building it."""
    if cfg.kind == "MBBlock":
        return madds_mbblock(cfg.cin, cfg.cout, cfg.r, cfg.k, cfg.s, h, w,
                             cfg.se, cfg.se_reduction)
    if cfg.kind in ("IdleL", "IdleR", "ISB"):
        return madds_idleblock(cfg.cin, cfg.r, cfg.k, cfg.s, cfg.alpha, h, w,
                               cfg.se, cfg.se_reduction)
    if cfg.kind == "Bottleneck":
        narrow = max(1, round(cfg.cin / cfg.r))
        hw = h * w
        hw2 = (-(-h // cfg.s)) * (-(-w // cfg.s))
        return (2 * cfg.cin * narrow * hw + 2 * narrow * narrow * cfg.k * cfg.k * hw2
                + 2 * narrow * cfg.cout * hw2)
    if cfg.kind == "ShuffleV1":
        narrow = max(1, round(cfg.cin / cfg.r))
        g = cfg.groups
        hw = h * w
        hw2 = (-(-h // cfg.s)) * (-(-w // cfg.s))
        return (2 * (cfg.cin // g) * narrow * hw + 2 * narrow * cfg.k * cfg.k * hw2
                + 2 * (narrow // g) * cfg.cout * hw2)
    if cfg.kind == "ShuffleV2":
        half = cfg.cin // 2
        hw = h * w
        return 2 * half * half * hw * 2 + 2 * half * cfg.k * cfg.k * hw
    raise ValueError(f"unknown block kind {cfg.kind!r}")


@dataclass
class CostRow:
    index: int | str
    kind: str
    analytic_madds: int
    analytic_params: int
    oracle_madds: int | None = None


@dataclass
class CostReport:
    rows: list[CostRow] = field(default_factory=list)
    total_madds: int = 0
    total_params: int = 0
    total_oracle_madds: int | None = None
    savings_vs_monotonic: float = 0.0

    def to_csv(self) -> str:
        lines = ["index,kind,analytic_madds,analytic_params,oracle_madds"]
        for r in self.rows:
            oracle = "" if r.oracle_madds is None else str(r.oracle_madds)
            lines.append(f"{r.index},{r.kind},{r.analytic_madds},"
                         f"{r.analytic_params},{oracle}")
        oracle = ("" if self.total_oracle_madds is None
                  else str(self.total_oracle_madds))
        lines.append(f"total,total,{self.total_madds},{self.total_params},{oracle}")
        return "\n".join(lines) + "\n"


def to_table_millions(madds: float) -> float:
    """Convert internal MAdds (2 per MAC) to the tables' millions-of-MAC
    convention."""
    return madds / 2.0 / 1e6


def network_cost(net, input_hw: tuple[int, int] | None = None,
                 verify: bool = False) -> CostReport:
    """Full per-element cost report for a built network.

    With `verify`, runs a forward pass on a unit batch and fills the
    instrumented counts, raising CostVerificationError on any row where
    analytic != oracle.
    """
    h, w = input_hw if input_hw is not None else net.spec.input_hw
    report = CostReport()
    oracle_rows = None
    if verify:
        oracle_rows = _oracle_counts(net, h, w)
    cur_h, cur_w = h, w
    mismatches = []
    for i, (name, block) in enumerate(net.elements):
        amadds = madds_generic(block, cur_h, cur_w)
        row = CostRow(i, _row_kind(name, block), amadds, block.param_count())
        if oracle_rows is not None:
            row.oracle_madds = oracle_rows[i]
            if row.oracle_madds != amadds:
                mismatches.append(f"{row.kind}[{i}]: analytic {amadds} != "
                                  f"oracle {row.oracle_madds}")
        report.rows.append(row)
        cfg = block.config
        if isinstance(cfg, BlockConfig) and cfg.kind in IDLE_KINDS:
            mb = madds_mbblock(cfg.cin, cfg.cout, cfg.r, cfg.k, cfg.s,
                               cur_h, cur_w, cfg.se, cfg.se_reduction)
            idle = madds_idleblock(cfg.cin, cfg.r, cfg.k, cfg.s, cfg.alpha,
                                   cur_h, cur_w, cfg.se, cfg.se_reduction)
            report.savings_vs_monotonic += mb - idle
        s = getattr(cfg, "s", 1)
        cur_h = -(-cur_h // s)
        cur_w = -(-cur_w // s)
    report.total_madds = sum(r.analytic_madds for r in report.rows)
    report.total_params = sum(r.analytic_params for r in report.rows)
    if oracle_rows is not None:
        report.total_oracle_madds = sum(oracle_rows)
        if mismatches:
            raise CostVerificationError("; ".join(mismatches))
    return report


def _row_kind(name: str, block: Block) -> str:
    cfg = block.config
    if isinstance(cfg, BlockConfig):
        return cfg.kind
    return name


def _oracle_counts(net, h: int, w: int) -> list[int]:
    """Instrumented 2*MACs per element from a real forward pass (unit batch)."""
    x = Tensor4.zeros(1, net.spec.input_c, h, w)
    counts = []
    ctx = ExecContext()
    for _, block in net.elements:
        before = ctx.mac_counter
        x = block.forward(x, ctx)
        counts.append(2 * (ctx.mac_counter - before))
    return counts
