"""Network composition: stem -> block stages -> head -> classifier, built
from declarative JSON configs, plus hybrid-composition (HC) insertion of
IdleBlocks into a base block list.

Config schema (all keys lower-case, unknown keys rejected):

    {
      "input":  {"c": .., "h": .., "w": ..},
      "stem":   {"out": .., "k": .., "s": .., "act": ".."},
      "blocks": [ {"kind": "..", "cin": .., "cout": .., "r": .., "k": ..,
                   "s": .., "alpha": .., "se": .., "act": "..",
                   "active_residual": ..}, ... ],
      "head":   {"widths": [..], "act": ".."},
      "classifier": {"classes": ..},
      "seed":   ..
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from .blocks import (Block, BlockConfig, _GraphBuilder, build_block,
                     init_params)
from .tensor import ExecContext, Tensor4

__all__ = [
    "SpecError", "StemSpec", "HeadSpec", "NetworkSpec", "HCPattern",
    "Network", "load_spec", "spec_from_dict", "apply_hc",
    "default_hc_insertions", "build_network", "forward_network",
    "find_config", "bundled_config_names",
]

_CONFIG_DIR = Path(__file__).parent / "configs"


class SpecError(ValueError):
    """Raised with every violation found in a network spec, one per line."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid network spec:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class StemSpec:
    out: int
    k: int
    s: int
    act: str


@dataclass(frozen=True)
class HeadSpec:
    widths: tuple[int, ...]
    act: str


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input: tuple[int, int, int]          # (c, h, w)
    stem: StemSpec
    blocks: tuple[BlockConfig, ...]
    head: HeadSpec
    classes: int
    seed: int = 0

    @property
    def input_c(self) -> int:
        return self.input[0]

    @property
    def input_hw(self) -> tuple[int, int]:
        return self.input[1], self.input[2]


@dataclass(frozen=True)
class HCPattern:
    """IdleBlock insertions: (base block index, count) pairs.

    monotonic_idle emits IdleL only; alternating_lr emits IdleL, IdleR, ...
    restarting at each insertion run. Inserted blocks inherit channel width,
    expansion, kernel, SE flag and activation from the block they follow,
    with stride 1 and this pattern's idle factor.
    """

    mode: str
    insertions: tuple[tuple[int, int], ...]
    alpha: float = 0.5

    def validate(self, n_blocks: int) -> list[str]:
        errs = []
        if self.mode not in ("monotonic_idle", "alternating_lr"):
            errs.append(f"unknown HC mode {self.mode!r}")
        if not 0.0 < self.alpha < 1.0:
            errs.append(f"idle factor must lie in (0, 1), got {self.alpha}")
        for pos, count in self.insertions:
            if not 0 <= pos < n_blocks:
                errs.append(f"insertion position {pos} outside [0, {n_blocks})")
            if count < 0:
                errs.append(f"negative insertion count {count} at position {pos}")
        return errs


_TOP_KEYS = {"input", "stem", "blocks", "head", "classifier", "seed"}
_BLOCK_KEYS = {"kind", "cin", "cout", "r", "k", "s", "alpha", "se", "act",
               "active_residual"}


def _check_keys(d: dict, allowed: set, required: set, where: str,
                errs: list[str]) -> bool:
    unknown = set(d) - allowed
    missing = required - set(d)
    for k in sorted(unknown):
        errs.append(f"{where}: unknown key {k!r}")
    for k in sorted(missing):
        errs.append(f"{where}: missing key {k!r}")
    return not missing


def spec_from_dict(d: dict, name: str = "unnamed") -> NetworkSpec:
    """Validate a config tree, collecting every violation before raising."""
    errs: list[str] = []
    if not isinstance(d, dict):
        raise SpecError(["top level must be an object"])
    _check_keys(d, _TOP_KEYS, _TOP_KEYS - {"seed"}, "top level", errs)

    input_chw = (0, 0, 0)
    if isinstance(d.get("input"), dict):
        if _check_keys(d["input"], {"c", "h", "w"}, {"c", "h", "w"}, "input", errs):
            input_chw = (int(d["input"]["c"]), int(d["input"]["h"]),
                         int(d["input"]["w"]))
            if any(v < 1 for v in input_chw):
                errs.append(f"input: dimensions must be >= 1, got {input_chw}")
    elif "input" in d:
        errs.append("input: must be an object")

    stem = StemSpec(1, 1, 1, "identity")
    if isinstance(d.get("stem"), dict):
        if _check_keys(d["stem"], {"out", "k", "s", "act"},
                       {"out", "k", "s", "act"}, "stem", errs):
            stem = StemSpec(int(d["stem"]["out"]), int(d["stem"]["k"]),
                            int(d["stem"]["s"]), str(d["stem"]["act"]))
            if stem.k < 1 or stem.k % 2 == 0:
                errs.append(f"stem: kernel must be odd, got {stem.k}")
            if stem.s < 1:
                errs.append(f"stem: stride must be >= 1, got {stem.s}")
    elif "stem" in d:
        errs.append("stem: must be an object")

    blocks: list[BlockConfig] = []
    if isinstance(d.get("blocks"), list):
        if not d["blocks"]:
            errs.append("blocks: list must not be empty")
        for i, bd in enumerate(d["blocks"]):
            where = f"blocks[{i}]"
            if not isinstance(bd, dict):
                errs.append(f"{where}: must be an object")
                continue
            if not _check_keys(bd, _BLOCK_KEYS, {"kind", "cin", "cout"},
                               where, errs):
                continue
            cfg = BlockConfig(
                kind=str(bd["kind"]), cin=int(bd["cin"]), cout=int(bd["cout"]),
                r=float(bd.get("r", 1.0)), k=int(bd.get("k", 3)),
                s=int(bd.get("s", 1)), alpha=float(bd.get("alpha", 0.5)),
                se=bool(bd.get("se", False)), act=str(bd.get("act", "relu")),
                active_residual=bool(bd.get("active_residual", True)))
            for msg in cfg.validate():
                errs.append(f"{where}: {msg}")
            blocks.append(cfg)
    elif "blocks" in d:
        errs.append("blocks: must be a list")

    head = HeadSpec((1,), "identity")
    if isinstance(d.get("head"), dict):
        if _check_keys(d["head"], {"widths", "act"}, {"widths", "act"},
                       "head", errs):
            widths = d["head"]["widths"]
            if not isinstance(widths, list) or not widths:
                errs.append("head: widths must be a non-empty list")
            else:
                head = HeadSpec(tuple(int(v) for v in widths),
                                str(d["head"]["act"]))
    elif "head" in d:
        errs.append("head: must be an object")

    classes = 0
    if isinstance(d.get("classifier"), dict):
        if _check_keys(d["classifier"], {"classes"}, {"classes"},
                       "classifier", errs):
            classes = int(d["classifier"]["classes"])
            if classes < 2:
                errs.append(f"classifier: classes must be >= 2, got {classes}")
    elif "classifier" in d:
        errs.append("classifier: must be an object")

    seed = int(d.get("seed", 0))

    # Chaining and shape propagation.
    prev = stem.out
    for i, cfg in enumerate(blocks):
        if cfg.cin != prev:
            errs.append(f"blocks[{i}]: cin {cfg.cin} does not chain from "
                        f"preceding output {prev}")
        prev = cfg.cout
    if not errs and input_chw[1] >= 1:
        h, w = input_chw[1], input_chw[2]
        h, w = -(-h // stem.s), -(-w // stem.s)
        for cfg in blocks:
            h, w = -(-h // cfg.s), -(-w // cfg.s)
        if h < 1 or w < 1:
            errs.append(f"spatial size after all strides is {h}x{w}")

    if errs:
        raise SpecError(errs)
    return NetworkSpec(name=name, input=input_chw, stem=stem,
                       blocks=tuple(blocks), head=head, classes=classes,
                       seed=seed)


def load_spec(path: str | Path) -> NetworkSpec:
    """Load and validate a JSON network spec; the network name is the file
    stem."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise SpecError([f"cannot read {path}: {e}"]) from e
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecError([f"{path}: invalid JSON: {e}"]) from e
    return spec_from_dict(d, name=path.stem)


def bundled_config_names() -> list[str]:
    return sorted(p.stem for p in _CONFIG_DIR.glob("*.json"))


def find_config(name_or_path: str | Path) -> Path:
    """Resolve a filesystem path or the bare name of a bundled config."""
    p = Path(name_or_path)
    if p.exists():
        return p
    candidate = _CONFIG_DIR / (str(name_or_path) + ".json")
    if candidate.exists():
        return candidate
    candidate = _CONFIG_DIR / str(name_or_path)
    if candidate.exists():
        return candidate
    raise SpecError([f"no such config file or bundled config: {name_or_path} "
                     f"(bundled: {', '.join(bundled_config_names())})"])


def apply_hc(base: NetworkSpec, pattern: HCPattern) -> NetworkSpec:
    """Insert IdleBlocks into a copy of `base`; existing blocks are untouched."""
    errs = pattern.validate(len(base.blocks))
    if errs:
        raise SpecError(errs)
    inserted_after: dict[int, list[BlockConfig]] = {}
    for pos, count in pattern.insertions:
        host = base.blocks[pos]
        run = inserted_after.setdefault(pos, [])
        for j in range(count):
            if pattern.mode == "alternating_lr":
                kind = "IdleL" if j % 2 == 0 else "IdleR"
            else:
                kind = "IdleL"
            cfg = BlockConfig(kind=kind, cin=host.cout, cout=host.cout,
                              r=host.r, k=host.k, s=1, alpha=pattern.alpha,
                              se=host.se, se_reduction=host.se_reduction,
                              act=host.act)
            bad = cfg.validate()
            if bad:
                raise SpecError([f"insertion after block {pos}: {m}"
                                 for m in bad])
            run.append(cfg)
    out: list[BlockConfig] = []
    for i, cfg in enumerate(base.blocks):
        out.append(cfg)
        out.extend(inserted_after.get(i, []))
    return replace(base, blocks=tuple(out))


def default_hc_insertions(spec: NetworkSpec, total: int) -> tuple[tuple[int, int], ...]:
    """Default placement: append after the last block of each stage (stages
    are delimited by stride > 1), distributing counts proportionally to stage
    depth with largest remainders."""
    if total < 1:
        return ()
    stages: list[list[int]] = [[]]
    for i, cfg in enumerate(spec.blocks):
        if cfg.s > 1 and stages[-1]:
            stages.append([])
        stages[-1].append(i)
    depth = len(spec.blocks)
    quotas = [len(st) * total / depth for st in stages]
    counts = [int(q) for q in quotas]
    remainders = sorted(range(len(stages)), key=lambda i: quotas[i] - counts[i],
                        reverse=True)
    short = total - sum(counts)
    for i in remainders[:short]:
        counts[i] += 1
    return tuple((stage[-1], c) for stage, c in zip(stages, counts) if c > 0)


@dataclass(frozen=True)
class ElementMeta:
    """Config stand-in for stem/head/classifier elements."""

    kind: str
    cin: int
    cout: int
    s: int = 1


class Network:
    """Built network: named elements executed in order."""

    def __init__(self, spec: NetworkSpec, elements: list[tuple[str, Block]]):
        self.spec = spec
        self.elements = elements

    def forward(self, x: Tensor4, ctx: ExecContext | None = None) -> Tensor4:
        for _, block in self.elements:
            x = block.forward(x, ctx)
        return x

    def forward_tape(self, x: Tensor4, ctx: ExecContext | None = None):
        tapes = []
        for _, block in self.elements:
            x, tape = block.forward_tape(x, ctx)
            tapes.append(tape)
        return x, tapes

    def backward(self, tapes: list, cot: Tensor4):
        """Returns (d_input, {"<element>.<param>": grad})."""
        grads: dict = {}
        for (name, block), tape in zip(reversed(self.elements),
                                       reversed(tapes)):
            cot, local = block.backward(tape, cot)
            for pname, g in local.items():
                grads[f"{name}.{pname}"] = g
        return cot, grads

    def param_items(self):
        """Yields (global name, owner block, local name) for every parameter."""
        for name, block in self.elements:
            for pname in block.params:
                yield f"{name}.{pname}", block, pname

    def param_count(self) -> int:
        return sum(b.param_count() for _, b in self.elements)


def _build_stem(spec: NetworkSpec) -> Block:
    g = _GraphBuilder(spec.input_c)
    t = g.conv(0, "conv.w", spec.input_c, spec.stem.out, spec.stem.k,
               spec.stem.s)
    t = g.affine(t, "bn")
    t = g.act(t, spec.stem.act)
    meta = ElementMeta("stem", spec.input_c, spec.stem.out, spec.stem.s)
    return Block(meta, g.params, g.steps, g.n_slots, t)


def _build_head(spec: NetworkSpec) -> Block:
    cin = spec.blocks[-1].cout
    widths = spec.head.widths
    g = _GraphBuilder(cin)
    t = g.conv(0, "conv.w", cin, widths[0], 1, 1)
    t = g.affine(t, "bn")
    t = g.act(t, spec.head.act)
    t = g.gap(t)
    prev = widths[0]
    for i, width in enumerate(widths[1:]):
        t = g.dense(t, f"fc{i}", prev, width)
        t = g.act(t, spec.head.act)
        prev = width
    meta = ElementMeta("head", cin, prev)
    return Block(meta, g.params, g.steps, g.n_slots, t)


def _build_classifier(spec: NetworkSpec) -> Block:
    cin = spec.head.widths[-1]
    g = _GraphBuilder(cin)
    t = g.dense(0, "fc", cin, spec.classes)
    meta = ElementMeta("classifier", cin, spec.classes)
    return Block(meta, g.params, g.steps, g.n_slots, t)


def build_network(spec: NetworkSpec, init: bool = True) -> Network:
    """Build all elements; parameters are drawn deterministically from the
    spec seed (or left zeroed with init=False, e.g. for cost analysis)."""
    elements: list[tuple[str, Block]] = [("stem", _build_stem(spec))]
    for i, cfg in enumerate(spec.blocks):
        elements.append((f"block{i}", build_block(cfg)))
    elements.append(("head", _build_head(spec)))
    elements.append(("classifier", _build_classifier(spec)))
    net = Network(spec, elements)
    if init:
        for name, block in elements:
            init_params(block, spec.seed, prefix=f"{name}.")
    return net


def forward_network(net: Network, x: Tensor4,
                    ctx: ExecContext | None = None) -> Tensor4:
    c, h, w = net.spec.input
    if (x.c, x.h, x.w) != (c, h, w):
        raise ValueError(f"input shape {(x.c, x.h, x.w)} does not match "
                         f"spec input {(c, h, w)}")
    return net.forward(x, ctx)
