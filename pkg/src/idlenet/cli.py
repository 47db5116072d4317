"""Command-line front end.

Subcommands: cost, verify, rf, gradcheck, train-smoke, bench. Results go to
stdout, diagnostics to stderr. Exit codes: 0 success, 1 check failure,
2 usage or config error.

The cost table renders MAdds in the comparison tables' millions-of-MACs
convention; CSV output carries the raw internal values (2 per MAC).
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time

import numpy as np

from . import backend, battery, cost, gradcheck, rf, toy
from .blocks import BlockConfig, build_block
from .network import (NetworkSpec, SpecError, build_network, find_config,
                      load_spec)
from .tensor import ExecContext, Tensor4


def _load(config: str) -> NetworkSpec:
    return load_spec(find_config(config))


def cmd_cost(args) -> int:
    spec = _load(args.config)
    net = build_network(spec, init=False)
    hw = tuple(args.hw) if args.hw else None
    verify_error = None
    try:
        report = cost.network_cost(net, input_hw=hw, verify=args.verify)
    except cost.CostVerificationError as e:
        verify_error = e
        report = cost.network_cost(net, input_hw=hw, verify=False)
    if args.format == "csv":
        sys.stdout.write(report.to_csv())
    else:
        print(f"network: {spec.name}   input: "
              f"{hw or spec.input_hw} x {spec.input_c}ch")
        print(f"{'idx':>4} {'kind':<12} {'MAdds (M)':>10} {'params':>10} "
              f"{'oracle (M)':>11}")
        for row in report.rows:
            oracle = ("" if row.oracle_madds is None
                      else f"{cost.to_table_millions(row.oracle_madds):11.1f}")
            print(f"{row.index:>4} {row.kind:<12} "
                  f"{cost.to_table_millions(row.analytic_madds):10.1f} "
                  f"{row.analytic_params:>10} {oracle}")
        print(f"total MAdds: {cost.to_table_millions(report.total_madds):.1f} M"
              f"   params: {report.total_params / 1e6:.2f} M")
        if report.savings_vs_monotonic:
            saved = cost.to_table_millions(report.savings_vs_monotonic)
            print(f"saved vs all-MBBlock composition: {saved:.1f} M")
        if report.total_oracle_madds is not None and verify_error is None:
            print("verification: analytic == instrumented on every row")
    if verify_error is not None:
        print(f"verification FAILED: {verify_error}", file=sys.stderr)
        return 1
    return 0


def cmd_verify(args) -> int:
    override = None
    if args.alpha is not None or args.channels is not None:
        c = args.channels if args.channels is not None else 8
        a = args.alpha if args.alpha is not None else 0.5
        override = BlockConfig("IdleL", c, c, r=2, k=3, s=1, alpha=a,
                               act="relu")
        errs = override.validate()
        if errs:
            print("invalid override config: " + "; ".join(errs),
                  file=sys.stderr)
            return 2
    checks = battery.run_battery(seed=args.seed, idle_override=override)
    failed = [name for name, ok, _ in checks if not ok]
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    if failed:
        print(f"{len(failed)} invariant(s) failed: {', '.join(failed)}",
              file=sys.stderr)
        return 1
    return 0


def cmd_rf(args) -> int:
    spec = _load(args.config)
    state = rf.propagate_spec(spec)
    rows = [(i, g.lo, g.hi, g.rf, g.jump) for i, g in enumerate(state.groups)]
    measured = None
    if args.probe:
        try:
            fragment = rf.build_positive_fragment(spec)
        except ValueError as e:
            print(str(e), file=sys.stderr)
            return 2
        h, w = spec.input_hw
        y = rf.fragment_forward(fragment,
                                Tensor4.zeros(1, spec.input_c, h, w))
        pos = (y.h // 2, y.w // 2)
        measured = [rf.probe_rf(fragment, spec.input_c, h, w,
                                (g.lo + g.hi) // 2, pos)
                    for g in state.groups]
    if args.format == "csv":
        print("group,ch_lo,ch_hi,rf,jump")
        for row in rows:
            print(",".join(str(v) for v in row))
    else:
        print(f"network: {spec.name}  (after stem + {len(spec.blocks)} blocks)")
        header = f"{'group':>5} {'channels':>12} {'rf':>5} {'jump':>5}"
        if measured is not None:
            header += f" {'probed':>7}"
        print(header)
        for i, (idx, lo, hi, rfv, jump) in enumerate(rows):
            line = f"{idx:>5} {f'[{lo},{hi})':>12} {rfv:>5} {jump:>5}"
            if measured is not None:
                line += f" {measured[i]:>7}"
            print(line)
    if measured is not None:
        bad = [i for i, (row, m) in enumerate(zip(rows, measured))
               if row[3] != m]
        if bad:
            print(f"probe disagreement in group(s) {bad}", file=sys.stderr)
            return 1
        print("probe agrees with analytic receptive fields")
    return 0


def cmd_gradcheck(args) -> int:
    failed = False
    targets: list[tuple[str, object]] = []
    if args.config:
        spec = _load(args.config)
        targets.append((spec.name, build_network(spec)))
    else:
        for kind in ("MBBlock", "IdleL", "IdleR", "ISB", "Bottleneck",
                     "ShuffleV1", "ShuffleV2"):
            cfg = BlockConfig(kind, 4, 4, r=2, k=3, s=1, alpha=0.5, act="relu")
            targets.append((kind, build_block(cfg, seed=args.seed)))
        targets.append(("toy-hc-4", build_network(_load("toy-hc-4"))))
    for name, obj in targets:
        report = gradcheck.grad_check(obj, seed=args.seed, tol=args.tol)
        status = "PASS" if report.passed else "FAIL"
        print(f"{status} {name}: max rel err {report.max_rel_err:.3e} over "
              f"{sum(r.checked_entries for r in report.rows)} entries "
              f"(tol {args.tol:g})")
        failed |= not report.passed
    return 1 if failed else 0


def cmd_train_smoke(args) -> int:
    spec = _load(args.config)
    if spec.classes != 2:
        print(f"config {spec.name} has {spec.classes} classes; the smoke "
              f"harness needs 2", file=sys.stderr)
        return 2
    ds = toy.make_toy_dataset(args.samples, seed=args.seed)
    try:
        result = toy.train_smoke(spec, ds, steps=args.steps, lr=args.lr,
                                 momentum=args.momentum,
                                 batch_size=args.batch_size, seed=args.seed)
    except toy.TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return 1
    if args.csv:
        sys.stdout.write(toy.loss_curve_csv(result))
    else:
        print(f"{args.steps} steps on {args.samples} samples "
              f"(lr={args.lr}, momentum={args.momentum}): final train "
              f"accuracy {result.final_accuracy:.4f}")
    return 0


def cmd_bench(args) -> int:
    spec = _load(args.config)
    backend.set_num_threads(args.threads)
    net = build_network(spec)
    c, h, w = spec.input
    x = Tensor4(np.random.default_rng(0).standard_normal((1, c, h, w)))
    net.forward(x)  # warm-up, excluded from stats
    samples = []
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        net.forward(x)
        samples.append((time.perf_counter() - t0) * 1e3)
    samples.sort()
    median = statistics.median(samples)
    p90 = samples[min(len(samples) - 1, int(0.9 * len(samples)))]
    print(f"config={spec.name} backend={backend.BACKEND} "
          f"threads={args.threads} repeats={args.repeat}")
    print(f"median_ms={median:.3f} p90_ms={p90:.3f} "
          f"min_ms={samples[0]:.3f} max_ms={samples[-1]:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="idlenet",
        description="Convolutional block toolkit: cost model, verification, "
                    "receptive fields, gradient checks, toy training, "
                    "micro-benchmarks.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cost", help="analytic MAdds/parameter report")
    p.add_argument("--config", required=True,
                   help="config path or bundled name")
    p.add_argument("--hw", nargs=2, type=int, metavar=("H", "W"),
                   default=[224, 224])
    p.add_argument("--format", choices=["table", "csv"], default="table")
    p.add_argument("--verify", action="store_true",
                   help="run the instrumented oracle and compare per row")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("verify", help="run the invariant battery")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=None,
                   help="idle factor for an extra idle-identity case")
    p.add_argument("--channels", type=int, default=None,
                   help="channel count for the extra idle-identity case")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("rf", help="receptive-field analysis")
    p.add_argument("--config", required=True)
    p.add_argument("--probe", action="store_true",
                   help="also measure by sensitivity probe and compare")
    p.add_argument("--format", choices=["table", "csv"], default="table")
    p.set_defaults(func=cmd_rf)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--config", default=None,
                   help="check a whole network config instead of the block zoo")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-smoke", help="toy SGD training run")
    p.add_argument("--config", default="toy-hc-4")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", action="store_true",
                   help="emit the loss curve as CSV on stdout")
    p.set_defaults(func=cmd_train_smoke)

    p = sub.add_parser("bench", help="forward-pass wall-clock statistics")
    p.add_argument("--config", required=True)
    p.add_argument("--repeat", type=int, default=10)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SpecError as e:
        print(str(e), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
