"""Invariant battery behind the `verify` subcommand.

Each check returns (name, passed, detail); the CLI prints one line per check
and fails if any did. Sizes are kept small so the whole battery runs in well
under a minute.
"""

from __future__ import annotations

import numpy as np

from . import cost, ops, rf
from .blocks import BlockConfig, build_block, idle_widths
from .gradcheck import grad_check
from .tensor import ExecContext, Tensor4

__all__ = ["run_battery"]


def _draw_mb_config(rng) -> tuple[BlockConfig, int, int]:
    c_in = int(rng.choice([4, 8, 12, 16]))
    c_out = int(rng.choice([c_in, c_in + 4]))
    r = int(rng.integers(1, 5))
    k = int(rng.choice([1, 3, 5]))
    s = int(rng.choice([1, 2]))
    h = int(rng.choice([6, 8, 10]))
    w = int(rng.choice([6, 8, 10]))
    cfg = BlockConfig("MBBlock", c_in, c_out, r=r, k=k, s=s, act="relu")
    return cfg, h, w


def _draw_idle_config(rng, kind=None) -> tuple[BlockConfig, int, int]:
    c = int(rng.choice([4, 8, 12, 16]))
    alpha = float(rng.choice([0.25, 0.5, 0.75]))
    r = int(rng.integers(1, 5))
    k = int(rng.choice([1, 3, 5]))
    h = int(rng.choice([6, 8, 10]))
    w = int(rng.choice([6, 8, 10]))
    kind = kind or str(rng.choice(["IdleL", "IdleR", "ISB"]))
    cfg = BlockConfig(kind, c, c, r=r, k=k, s=1, alpha=alpha, act="relu")
    return cfg, h, w


def _check_conv_mac(rng, trials=15):
    for _ in range(trials):
        g = int(rng.integers(1, 4))
        cin = g * int(rng.integers(1, 4))
        cout = g * int(rng.integers(1, 4))
        k = int(rng.choice([1, 3, 5]))
        s = int(rng.choice([1, 2]))
        h, w = int(rng.integers(k, 10)), int(rng.integers(k, 10))
        x = Tensor4(rng.standard_normal((1, cin, h, w)))
        p = ops.ConvParams(cin, cout, k, s, g,
                           rng.standard_normal((cout, cin // g, k, k)))
        ctx = ExecContext()
        y = ops.conv2d(x, p, ctx)
        expect = 1 * cout * y.h * y.w * (cin // g) * k * k
        if ctx.mac_counter != expect:
            return False, f"counter {ctx.mac_counter} != {expect}"
    return True, f"{trials} draws"


def _check_permutations(rng):
    for c in range(2, 33):
        x = Tensor4(rng.standard_normal((1, c, 3, 3)))
        for g in (d for d in range(1, c + 1) if c % d == 0):
            y = ops.channel_shuffle(ops.channel_shuffle(x, g), c // g)
            if not np.array_equal(y.arr, x.arr):
                return False, f"involution failed at C={c}, g={g}"
    x = Tensor4(rng.standard_normal((2, 8, 4, 4)))
    a, b = ops.split_channels(x, 3)
    if not np.array_equal(ops.concat_channels(a, b).arr, x.arr):
        return False, "split/concat round trip failed"
    sh = ops.channel_shuffle(x, 4)
    if not np.array_equal(np.sort(sh.arr, axis=1), np.sort(x.arr, axis=1)):
        return False, "shuffle changed the value multiset"
    return True, "round trips, involutions C<=32, multisets"


def _check_eq_costs(rng, trials=10):
    for _ in range(trials):
        cfg, h, w = _draw_mb_config(rng)
        if h % cfg.s or w % cfg.s:
            h, w = h - h % cfg.s, w - w % cfg.s
        block = build_block(cfg, seed=1)
        ctx = ExecContext()
        block.forward(Tensor4(rng.standard_normal((1, cfg.cin, h, w))), ctx)
        analytic = cost.madds_mbblock(cfg.cin, cfg.cout, cfg.r, cfg.k, cfg.s,
                                      h, w)
        if analytic != 2 * ctx.mac_counter:
            return False, f"MBBlock {cfg}: {analytic} != {2 * ctx.mac_counter}"
    for _ in range(trials):
        cfg, h, w = _draw_idle_config(rng, kind="IdleL")
        block = build_block(cfg, seed=1)
        ctx = ExecContext()
        block.forward(Tensor4(rng.standard_normal((1, cfg.cin, h, w))), ctx)
        analytic = cost.madds_idleblock(cfg.cin, cfg.r, cfg.k, 1, cfg.alpha,
                                        h, w)
        if analytic != 2 * ctx.mac_counter:
            return False, f"IdleL {cfg}: {analytic} != {2 * ctx.mac_counter}"
        mb = cost.madds_mbblock(cfg.cin, cfg.cin, cfg.r, cfg.k, 1, h, w)
        savings = cost.idle_savings(cfg.cin, cfg.r, cfg.alpha, h, w, 1)
        if mb - analytic != savings:
            return False, f"savings identity broke: {mb - analytic} != {savings}"
    return True, f"{2 * trials} draws, exact"


def _check_idle_identity(rng, trials=15, override=None):
    cfgs = [override] if override is not None else []
    while len(cfgs) < trials:
        cfgs.append(_draw_idle_config(rng)[0])
    for cfg in cfgs:
        block = build_block(cfg, seed=int(rng.integers(0, 1000)))
        x = Tensor4(rng.standard_normal((2, cfg.cin, 6, 6)))
        y = block.forward(x)
        idle, active = idle_widths(cfg.cin, cfg.alpha)
        if cfg.kind == "IdleR":
            ok = np.array_equal(y.arr[:, :idle], x.arr[:, :idle])
        elif cfg.kind == "IdleL":
            ok = np.array_equal(y.arr[:, active:], x.arr[:, active:])
        else:  # ISB: idle range lands on shuffled positions
            perm = ops.shuffle_permutation(cfg.cin, cfg.groups)
            inv = np.argsort(perm)
            ok = np.array_equal(y.arr[:, inv[active:]], x.arr[:, active:])
        if not ok:
            return False, f"idle channels modified for {cfg.kind} C={cfg.cin} " \
                          f"alpha={cfg.alpha}"
    return True, f"{len(cfgs)} cases"


def _check_rf(rng):
    stacks = [
        [BlockConfig("IdleR", 8, 8, r=2, k=3, alpha=0.5, act="relu")] * 2,
        [BlockConfig("IdleR", 8, 8, r=2, k=3, alpha=0.5, act="relu"),
         BlockConfig("IdleL", 8, 8, r=2, k=3, alpha=0.5, act="relu")],
        [BlockConfig("MBBlock", 8, 8, r=2, k=3, act="relu"),
         BlockConfig("IdleL", 8, 8, r=2, k=5, alpha=0.5, act="relu")],
        [BlockConfig("IdleL", 8, 8, r=2, k=3, alpha=0.5, act="relu"),
         BlockConfig("MBBlock", 8, 8, r=2, k=3, act="relu")],
    ]
    for cfgs in stacks:
        state = rf.RFState.fresh(8)
        for cfg in cfgs:
            state = rf.propagate_rf(state, cfg)
        size = state.max_rf() + 8
        frag = rf.build_positive_fragment(cfgs)
        for g in state.groups:
            ch = (g.lo + g.hi) // 2
            measured = rf.probe_rf(frag, 8, size, size, ch,
                                   (size // 2, size // 2))
            if measured != g.rf:
                return False, f"group [{g.lo},{g.hi}) analytic {g.rf} != " \
                              f"probe {measured}"
    return True, f"{len(stacks)} stacks"


def _check_grads(rng):
    for kind in ("MBBlock", "IdleL", "ISB"):
        cfg = BlockConfig(kind, 4, 4, r=2, k=3, s=1, alpha=0.5, act="relu")
        block = build_block(cfg, seed=5)
        report = grad_check(block, seed=7, tol=1e-5)
        if not report.passed:
            return False, f"{kind} max rel err {report.max_rel_err:.2e}"
    return True, "MBBlock, IdleL, ISB at 1e-5"


def run_battery(seed: int = 0, idle_override: BlockConfig | None = None):
    """Run every invariant check; returns [(name, passed, detail), ...]."""
    rng = np.random.default_rng(seed)
    checks = [
        ("conv-mac-count", *_check_conv_mac(rng)),
        ("permutation-ops", *_check_permutations(rng)),
        ("cost-formula-vs-oracle", *_check_eq_costs(rng)),
        ("idle-identity", *_check_idle_identity(rng, override=idle_override)),
        ("rf-probe-agreement", *_check_rf(rng)),
        ("gradient-checks", *_check_grads(rng)),
    ]
    return checks
