"""Block zoo: bottleneck, inverted residual (MBBlock), shuffle v1/v2, and the
idle family (IdleL / IdleR / ISB), built as dataflow graphs over the tensor
ops.

A Block owns its parameter arrays and an ordered step list; execution walks
the steps, optionally recording every intermediate value so the exact
reverse-mode gradient can be replayed. Blocks are immutable after build
(parameter arrays may be updated in place by a trainer, which is the one
sanctioned mutation) and forward never mutates anything.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .tensor import ExecContext, Tensor4

__all__ = [
    "BLOCK_KINDS", "IDLE_KINDS", "BlockConfig", "Block", "Step",
    "build_block", "build_mbblock", "build_idleblock", "build_bottleneck",
    "build_shuffle_v1", "build_shuffle_v2", "build_isb",
    "forward", "param_count", "init_params", "idle_widths", "expanded_width",
]

BLOCK_KINDS = ("Bottleneck", "MBBlock", "ShuffleV1", "ShuffleV2",
               "IdleL", "IdleR", "ISB")
IDLE_KINDS = ("IdleL", "IdleR", "ISB")
CONFIG_ACTIVATIONS = ("relu", "relu6", "hswish", "identity")


def idle_widths(c: int, alpha: float) -> tuple[int, int]:
    """(idle, active) channel widths: idle = floor(c * alpha).

    A whisker of tolerance absorbs decimal-float noise in c * alpha.
    """
    idle = int(math.floor(c * alpha + 1e-9))
    return idle, c - idle


def expanded_width(c: int, r: float) -> int:
    return int(round(c * r))


@dataclass(frozen=True)
class BlockConfig:
    """Hyperparameters of one block."""

    kind: str
    cin: int
    cout: int
    r: float = 1.0
    k: int = 3
    s: int = 1
    alpha: float = 0.5
    se: bool = False
    se_reduction: int = 4
    act: str = "relu"
    active_residual: bool = True
    groups: int = 2

    def validate(self) -> list[str]:
        errs = []
        if self.kind not in BLOCK_KINDS:
            errs.append(f"unknown block kind {self.kind!r}")
            return errs
        if self.cin < 1 or self.cout < 1:
            errs.append(f"channel counts must be >= 1, got {self.cin}->{self.cout}")
        if self.k < 1 or self.k % 2 == 0:
            errs.append(f"kernel must be odd, got {self.k}")
        if self.s < 1:
            errs.append(f"stride must be >= 1, got {self.s}")
        if self.r <= 0:
            errs.append(f"expansion must be > 0, got {self.r}")
        if self.act not in CONFIG_ACTIVATIONS:
            errs.append(f"unknown activation {self.act!r}")
        if self.se and self.se_reduction < 1:
            errs.append(f"se_reduction must be >= 1, got {self.se_reduction}")
        if self.kind in IDLE_KINDS:
            if self.cin != self.cout:
                errs.append(f"{self.kind} requires cin == cout, got "
                            f"{self.cin}->{self.cout}")
            if self.s != 1:
                errs.append(f"{self.kind} requires stride 1, got {self.s}")
            if not 0.0 < self.alpha < 1.0:
                errs.append(f"idle factor must lie in (0, 1), got {self.alpha}")
            else:
                idle, active = idle_widths(self.cin, self.alpha)
                if idle < 1 or active < 1:
                    errs.append(f"idle split {idle}/{active} of {self.cin} channels "
                                f"leaves an empty branch (alpha={self.alpha})")
        if self.kind == "ShuffleV2":
            if self.cin != self.cout:
                errs.append(f"ShuffleV2 requires cin == cout, got "
                            f"{self.cin}->{self.cout}")
            if self.cin % 2:
                errs.append(f"ShuffleV2 requires even channels, got {self.cin}")
            if self.s != 1:
                errs.append("ShuffleV2 stride variant is unsupported (s must be 1)")
        if self.kind in ("ShuffleV1", "ISB"):
            if self.groups < 1:
                errs.append(f"groups must be >= 1, got {self.groups}")
        if self.kind == "ShuffleV1" and self.groups >= 1:
            narrow = max(1, int(round(self.cin / self.r)))
            for label, c in (("input", self.cin), ("narrow", narrow),
                             ("output", self.cout)):
                if c % self.groups:
                    errs.append(f"ShuffleV1 {label} width {c} not divisible by "
                                f"groups {self.groups}")
        return errs

    def validated(self) -> "BlockConfig":
        errs = self.validate()
        if errs:
            raise ValueError("; ".join(errs))
        return self


@dataclass(frozen=True)
class Step:
    """One graph node: op name, input/output value slots, parameter names."""

    op: str
    inputs: tuple[int, ...]
    outputs: tuple[int, ...]
    params: tuple[str, ...] = ()
    attrs: dict = field(default_factory=dict)


class Block:
    """A built block: config, owned parameters, ordered op graph."""

    def __init__(self, config: BlockConfig, params: dict[str, np.ndarray],
                 steps: list[Step], n_slots: int, out_slot: int):
        self.config = config
        self.params = params
        self.steps = steps
        self.n_slots = n_slots
        self.in_slot = 0
        self.out_slot = out_slot

    def forward(self, x: Tensor4, ctx: ExecContext | None = None) -> Tensor4:
        return _execute(self, x, ctx)[self.out_slot]

    def forward_tape(self, x: Tensor4, ctx: ExecContext | None = None):
        values = _execute(self, x, ctx)
        return values[self.out_slot], values

    def backward(self, values: list, cot: Tensor4):
        return _backward(self, values, cot)

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


class _GraphBuilder:
    """Accumulates steps while tracking slot channel widths."""

    def __init__(self, in_channels: int):
        self.steps: list[Step] = []
        self.params: dict[str, np.ndarray] = {}
        self.channels = {0: in_channels}
        self.n_slots = 1

    def _new_slot(self, c: int) -> int:
        slot = self.n_slots
        self.n_slots += 1
        self.channels[slot] = c
        return slot

    def conv(self, xin: int, name: str, cin: int, cout: int, k: int, s: int,
             groups: int = 1) -> int:
        self.params[name] = np.zeros((cout, cin // groups, k, k), dtype=np.float64)
        out = self._new_slot(cout)
        self.steps.append(Step("conv", (xin,), (out,), (name,),
                               {"cin": cin, "cout": cout, "k": k, "s": s,
                                "groups": groups}))
        return out

    def affine(self, xin: int, name: str) -> int:
        c = self.channels[xin]
        self.params[name + ".scale"] = np.ones(c, dtype=np.float64)
        self.params[name + ".bias"] = np.zeros(c, dtype=np.float64)
        out = self._new_slot(c)
        self.steps.append(Step("affine", (xin,), (out,),
                               (name + ".scale", name + ".bias"), {}))
        return out

    def act(self, xin: int, kind: str) -> int:
        if kind == "identity":
            return xin
        out = self._new_slot(self.channels[xin])
        self.steps.append(Step("act", (xin,), (out,), (), {"kind": kind}))
        return out

    def split(self, xin: int, at: int) -> tuple[int, int]:
        c = self.channels[xin]
        a = self._new_slot(at)
        b = self._new_slot(c - at)
        self.steps.append(Step("split", (xin,), (a, b), (), {"at": at}))
        return a, b

    def concat(self, a: int, b: int) -> int:
        ca, cb = self.channels[a], self.channels[b]
        out = self._new_slot(ca + cb)
        self.steps.append(Step("concat", (a, b), (out,), (), {"at": ca}))
        return out

    def shuffle(self, xin: int, g: int) -> int:
        out = self._new_slot(self.channels[xin])
        self.steps.append(Step("shuffle", (xin,), (out,), (), {"g": g}))
        return out

    def add(self, a: int, b: int) -> int:
        out = self._new_slot(self.channels[a])
        self.steps.append(Step("add", (a, b), (out,), (), {}))
        return out

    def gap(self, xin: int) -> int:
        out = self._new_slot(self.channels[xin])
        self.steps.append(Step("gap", (xin,), (out,), (), {}))
        return out

    def dense(self, xin: int, name: str, in_f: int, out_f: int,
              bias: bool = True) -> int:
        self.params[name + ".w"] = np.zeros((out_f, in_f), dtype=np.float64)
        names = (name + ".w",)
        if bias:
            self.params[name + ".b"] = np.zeros(out_f, dtype=np.float64)
            names = (name + ".w", name + ".b")
        out = self._new_slot(out_f)
        self.steps.append(Step("dense", (xin,), (out,), names,
                               {"in": in_f, "out": out_f, "bias": bias}))
        return out

    def mul_gate(self, xin: int, gate: int) -> int:
        out = self._new_slot(self.channels[xin])
        self.steps.append(Step("mul_gate", (xin, gate), (out,), (), {}))
        return out

    def se_unit(self, xin: int, prefix: str, c: int, reduction: int) -> int:
        hidden = max(1, c // reduction)
        pooled = self.gap(xin)
        h1 = self.dense(pooled, prefix + ".fc1", c, hidden)
        h1 = self.act(h1, "relu")
        h2 = self.dense(h1, prefix + ".fc2", hidden, c)
        gate = self.act(h2, "hsigmoid")
        return self.mul_gate(xin, gate)


def build_mbblock(cfg: BlockConfig) -> Block:
    """Inverted residual: expand 1x1 -> depthwise kxk -> squeeze 1x1.

    The final pointwise has no nonlinearity; the residual joins the narrow
    ends and exists iff cin == cout and s == 1.
    """
    cfg = cfg.validated()
    if cfg.kind != "MBBlock":
        raise ValueError(f"expected MBBlock config, got {cfg.kind}")
    e = expanded_width(cfg.cin, cfg.r)
    g = _GraphBuilder(cfg.cin)
    t = g.conv(0, "pw1.w", cfg.cin, e, 1, 1)
    t = g.affine(t, "bn1")
    t = g.act(t, cfg.act)
    t = g.conv(t, "dw.w", e, e, cfg.k, cfg.s, groups=e)
    t = g.affine(t, "bn2")
    t = g.act(t, cfg.act)
    if cfg.se:
        t = g.se_unit(t, "se", e, cfg.se_reduction)
    t = g.conv(t, "pw2.w", e, cfg.cout, 1, 1)
    t = g.affine(t, "bn3")
    if cfg.cin == cfg.cout and cfg.s == 1:
        t = g.add(t, 0)
    return Block(cfg, g.params, g.steps, g.n_slots, t)


def _build_idle_graph(cfg: BlockConfig, g: _GraphBuilder) -> int:
    """Shared idle construction; returns the output slot.

    IdleL transforms the leading channel range and concatenates (y1, x2);
    IdleR transforms the trailing range and concatenates (x2, y1). Both are
    position-preserving: the idle channels keep their input positions and are
    copied verbatim.
    """
    c = cfg.cin
    idle, active = idle_widths(c, cfg.alpha)
    e = expanded_width(c, cfg.r)
    left_active = cfg.kind in ("IdleL", "ISB")
    if left_active:
        x1, x2 = g.split(0, active)     # active leading
    else:
        x2, x1 = g.split(0, idle)       # idle leading
    t = g.conv(x1, "pw1.w", active, e, 1, 1)
    t = g.affine(t, "bn1")
    t = g.act(t, cfg.act)
    t = g.conv(t, "dw.w", e, e, cfg.k, 1, groups=e)
    t = g.affine(t, "bn2")
    t = g.act(t, cfg.act)
    if cfg.se:
        t = g.se_unit(t, "se", e, cfg.se_reduction)
    t = g.conv(t, "pw2.w", e, active, 1, 1)
    t = g.affine(t, "bn3")
    if cfg.active_residual:
        t = g.add(t, x1)
    return g.concat(t, x2) if left_active else g.concat(x2, t)


def build_idleblock(cfg: BlockConfig) -> Block:
    """Idled MBBlock: one branch transformed, the other copied verbatim."""
    cfg = cfg.validated()
    if cfg.kind not in ("IdleL", "IdleR"):
        raise ValueError(f"expected IdleL/IdleR config, got {cfg.kind}")
    g = _GraphBuilder(cfg.cin)
    out = _build_idle_graph(cfg, g)
    return Block(cfg, g.params, g.steps, g.n_slots, out)


def build_isb(cfg: BlockConfig) -> Block:
    """Inverted shuffle block: L-convention IdleBlock plus an exit shuffle."""
    cfg = cfg.validated()
    if cfg.kind != "ISB":
        raise ValueError(f"expected ISB config, got {cfg.kind}")
    g = _GraphBuilder(cfg.cin)
    out = _build_idle_graph(cfg, g)
    out = g.shuffle(out, cfg.groups)
    return Block(cfg, g.params, g.steps, g.n_slots, out)


def build_bottleneck(cfg: BlockConfig) -> Block:
    """Classic bottleneck: squeeze 1x1 -> full kxk -> expand 1x1; the residual
    joins the expanded ends."""
    cfg = cfg.validated()
    if cfg.kind != "Bottleneck":
        raise ValueError(f"expected Bottleneck config, got {cfg.kind}")
    narrow = max(1, int(round(cfg.cin / cfg.r)))
    g = _GraphBuilder(cfg.cin)
    t = g.conv(0, "pw1.w", cfg.cin, narrow, 1, 1)
    t = g.affine(t, "bn1")
    t = g.act(t, cfg.act)
    t = g.conv(t, "conv.w", narrow, narrow, cfg.k, cfg.s)
    t = g.affine(t, "bn2")
    t = g.act(t, cfg.act)
    t = g.conv(t, "pw2.w", narrow, cfg.cout, 1, 1)
    t = g.affine(t, "bn3")
    if cfg.cin == cfg.cout and cfg.s == 1:
        t = g.add(t, 0)
    return Block(cfg, g.params, g.steps, g.n_slots, t)


def build_shuffle_v1(cfg: BlockConfig) -> Block:
    """Bottleneck with grouped pointwise convs, a shuffle after the first, and
    a depthwise spatial conv."""
    cfg = cfg.validated()
    if cfg.kind != "ShuffleV1":
        raise ValueError(f"expected ShuffleV1 config, got {cfg.kind}")
    narrow = max(1, int(round(cfg.cin / cfg.r)))
    gr = cfg.groups
    g = _GraphBuilder(cfg.cin)
    t = g.conv(0, "pw1.w", cfg.cin, narrow, 1, 1, groups=gr)
    t = g.affine(t, "bn1")
    t = g.act(t, cfg.act)
    if gr > 1:
        t = g.shuffle(t, gr)
    t = g.conv(t, "dw.w", narrow, narrow, cfg.k, cfg.s, groups=narrow)
    t = g.affine(t, "bn2")
    t = g.conv(t, "pw2.w", narrow, cfg.cout, 1, 1, groups=gr)
    t = g.affine(t, "bn3")
    if cfg.cin == cfg.cout and cfg.s == 1:
        t = g.add(t, 0)
    return Block(cfg, g.params, g.steps, g.n_slots, t)


def build_shuffle_v2(cfg: BlockConfig) -> Block:
    """Split-transform-concat-shuffle unit; the transformed branch keeps its
    width throughout."""
    cfg = cfg.validated()
    if cfg.kind != "ShuffleV2":
        raise ValueError(f"expected ShuffleV2 config, got {cfg.kind}")
    half = cfg.cin // 2
    g = _GraphBuilder(cfg.cin)
    x1, x2 = g.split(0, half)
    t = g.conv(x2, "pw1.w", half, half, 1, 1)
    t = g.affine(t, "bn1")
    t = g.act(t, cfg.act)
    t = g.conv(t, "dw.w", half, half, cfg.k, 1, groups=half)
    t = g.affine(t, "bn2")
    t = g.conv(t, "pw2.w", half, half, 1, 1)
    t = g.affine(t, "bn3")
    t = g.act(t, cfg.act)
    out = g.concat(x1, t)
    out = g.shuffle(out, 2)
    return Block(cfg, g.params, g.steps, g.n_slots, out)


_BUILDERS = {
    "MBBlock": build_mbblock,
    "IdleL": build_idleblock,
    "IdleR": build_idleblock,
    "ISB": build_isb,
    "Bottleneck": build_bottleneck,
    "ShuffleV1": build_shuffle_v1,
    "ShuffleV2": build_shuffle_v2,
}


def build_block(cfg: BlockConfig, seed: int | None = None,
                prefix: str = "") -> Block:
    block = _BUILDERS[cfg.kind](cfg)
    if seed is not None:
        init_params(block, seed, prefix)
    return block


def forward(block: Block, x: Tensor4, ctx: ExecContext | None = None) -> Tensor4:
    if x.c != block.config.cin:
        raise ValueError(f"input has {x.c} channels, block expects "
                         f"{block.config.cin}")
    return block.forward(x, ctx)


def param_count(block: Block) -> int:
    return block.param_count()


def _execute(block: Block, x: Tensor4, ctx: ExecContext | None) -> list:
    values: list = [None] * block.n_slots
    values[block.in_slot] = x
    p = block.params
    for st in block.steps:
        a = st.attrs
        if st.op == "conv":
            cp = ops.ConvParams(a["cin"], a["cout"], a["k"], a["s"],
                                a["groups"], p[st.params[0]])
            values[st.outputs[0]] = ops.conv2d(values[st.inputs[0]], cp, ctx)
        elif st.op == "affine":
            values[st.outputs[0]] = ops.affine_channel(
                values[st.inputs[0]], p[st.params[0]], p[st.params[1]])
        elif st.op == "act":
            values[st.outputs[0]] = ops.activation(values[st.inputs[0]], a["kind"])
        elif st.op == "split":
            va, vb = ops.split_channels(values[st.inputs[0]], a["at"])
            values[st.outputs[0]] = va
            values[st.outputs[1]] = vb
        elif st.op == "concat":
            values[st.outputs[0]] = ops.concat_channels(
                values[st.inputs[0]], values[st.inputs[1]])
        elif st.op == "shuffle":
            values[st.outputs[0]] = ops.channel_shuffle(values[st.inputs[0]], a["g"])
        elif st.op == "add":
            values[st.outputs[0]] = ops.add(values[st.inputs[0]],
                                            values[st.inputs[1]])
        elif st.op == "gap":
            values[st.outputs[0]] = ops.global_avg_pool(values[st.inputs[0]])
        elif st.op == "dense":
            bias = p[st.params[1]] if a["bias"] else None
            values[st.outputs[0]] = ops.dense(values[st.inputs[0]],
                                              p[st.params[0]], bias, ctx)
        elif st.op == "mul_gate":
            values[st.outputs[0]] = ops.mul_channel_gate(
                values[st.inputs[0]], values[st.inputs[1]])
        else:
            raise ValueError(f"unknown step op {st.op!r}")
    return values


def _backward(block: Block, values: list, cot: Tensor4):
    """Replay the graph in reverse; returns (d_input, {param: grad})."""
    cots: list = [None] * block.n_slots
    cots[block.out_slot] = cot
    grads: dict[str, np.ndarray] = {}
    p = block.params

    def put(slot: int, g: Tensor4) -> None:
        cots[slot] = g if cots[slot] is None else ops.add(cots[slot], g)

    for st in reversed(block.steps):
        a = st.attrs
        if st.op == "split":
            u0, u1 = cots[st.outputs[0]], cots[st.outputs[1]]
            if u0 is None and u1 is None:
                continue
            x = values[st.inputs[0]]
            if u0 is None:
                u0 = Tensor4.zeros(x.n, a["at"], x.h, x.w)
            if u1 is None:
                u1 = Tensor4.zeros(x.n, x.c - a["at"], x.h, x.w)
            put(st.inputs[0], ops.split_channels_vjp(u0, u1))
            continue
        u = cots[st.outputs[0]]
        if u is None:
            continue
        if st.op == "conv":
            cp = ops.ConvParams(a["cin"], a["cout"], a["k"], a["s"],
                                a["groups"], p[st.params[0]])
            dx, dw = ops.conv2d_vjp(values[st.inputs[0]], cp, u)
            put(st.inputs[0], dx)
            _accum(grads, st.params[0], dw)
        elif st.op == "affine":
            dx, dscale, dbias = ops.affine_channel_vjp(
                values[st.inputs[0]], p[st.params[0]], u)
            put(st.inputs[0], dx)
            _accum(grads, st.params[0], dscale)
            _accum(grads, st.params[1], dbias)
        elif st.op == "act":
            put(st.inputs[0], ops.activation_vjp(values[st.inputs[0]],
                                                 a["kind"], u))
        elif st.op == "concat":
            ua, ub = ops.concat_channels_vjp(u, a["at"])
            put(st.inputs[0], ua)
            put(st.inputs[1], ub)
        elif st.op == "shuffle":
            put(st.inputs[0], ops.channel_shuffle_vjp(u, a["g"]))
        elif st.op == "add":
            ua, ub = ops.add_vjp(u)
            put(st.inputs[0], ua)
            put(st.inputs[1], ub)
        elif st.op == "gap":
            put(st.inputs[0], ops.global_avg_pool_vjp(values[st.inputs[0]], u))
        elif st.op == "dense":
            dx, dw, db = ops.dense_vjp(values[st.inputs[0]], p[st.params[0]], u)
            put(st.inputs[0], dx)
            _accum(grads, st.params[0], dw)
            if a["bias"]:
                _accum(grads, st.params[1], db)
        elif st.op == "mul_gate":
            dx, dgate = ops.mul_channel_gate_vjp(
                values[st.inputs[0]], values[st.inputs[1]], u)
            put(st.inputs[0], dx)
            put(st.inputs[1], dgate)
    return cots[block.in_slot], grads


def _accum(grads: dict, name: str, g) -> None:
    g = g.arr if isinstance(g, Tensor4) else g
    if name in grads:
        grads[name] = grads[name] + g
    else:
        grads[name] = np.array(g, dtype=np.float64, copy=True)


def _param_key(seed: int, name: str) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64).copy()


def _uniform(seed: int, name: str, bound: float, shape) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=_param_key(seed, name)))
    return gen.uniform(-bound, bound, size=shape)


def init_params(block: Block, seed: int, prefix: str = "") -> None:
    """Deterministic init. Conv/dense weights are uniform with the fan-based
    bound sqrt(6 / (fan_in + fan_out)) from a counter-based generator keyed by
    the (prefixed) parameter name, so the draw is order-independent. Affine
    scales start at 1, all biases at 0.
    """
    for st in block.steps:
        a = st.attrs
        if st.op == "conv":
            name = st.params[0]
            fan_in = (a["cin"] // a["groups"]) * a["k"] * a["k"]
            fan_out = (a["cout"] // a["groups"]) * a["k"] * a["k"]
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            block.params[name] = _uniform(seed, prefix + name, bound,
                                          block.params[name].shape)
        elif st.op == "dense":
            name = st.params[0]
            bound = math.sqrt(6.0 / (a["in"] + a["out"]))
            block.params[name] = _uniform(seed, prefix + name, bound,
                                          block.params[name].shape)
            if a["bias"]:
                block.params[st.params[1]] = np.zeros(a["out"], dtype=np.float64)
        elif st.op == "affine":
            c = block.params[st.params[0]].shape[0]
            block.params[st.params[0]] = np.ones(c, dtype=np.float64)
            block.params[st.params[1]] = np.zeros(c, dtype=np.float64)
