"""``talkconv`` command line: bench, gradcheck, train, oracle-diff.

Exit codes: 0 success, 1 runtime failure or failed check, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .baselines import BenchCore, oracle_diff
from .bench import BenchSpec, run_bench, write_csv
from .gradcheck import run_gradcheck
from .training import TrainConfig, train_loop

ORACLE_TOL = {"f64": 1e-6, "f32": 1e-4}


def _bench(args) -> int:
    spec = BenchSpec(
        cores=[BenchCore.parse(c) for c in (args.core or ["talk"])],
        ns=args.n or [10, 100, 1000, 10000], batch=args.batch, dim=args.dim, heads=args.heads,
        iterations=args.iters, warmup=args.warmup, repeats=args.repeats, workers=args.workers,
        dtype=args.dtype, l_max=args.l_max, r_max=args.r_max, seed=args.seed,
    )

    def show(row):
        print(f"{row.core:12s} n={row.n:<6d} {row.iters_per_sec:12.3f} it/s "
              f"peak={row.peak_bytes:>12d} B  mem_vs_attention={row.mem_reduction:.2f}x  {row.status}",
              flush=True)

    rows = run_bench(spec, show)
    if args.out:
        write_csv(rows, args.out)
    return 0


def _gradcheck(args) -> int:
    report = run_gradcheck(args.seed, args.trials)
    print("\n".join(report.lines()))
    return 0 if report.passed else 1


def _train(args) -> int:
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = {k: v for k, v in (("seed", args.seed), ("dtype", args.dtype),
                                   ("report_path", args.out)) if v is not None}
    if overrides:
        cfg = TrainConfig(**{**cfg.__dict__, **overrides})
    report = train_loop(cfg)
    print(f"steps={report.steps_run} final_loss={report.final_loss:.6f} "
          f"final_accuracy={report.final_accuracy:.4f} diverged={report.diverged} "
          f"skipped={report.skipped_steps}")
    return 0


def _oracle_diff(args) -> int:
    dtype = np.float32 if args.dtype == "f32" else np.float64
    worst = oracle_diff(args.seed, args.instances, dtype)
    tol = ORACLE_TOL[args.dtype]
    print(f"instances={args.instances} dtype={args.dtype} worst_rel_err={worst:.3e} tol={tol:g} "
          f"status={'PASS' if worst < tol else 'FAIL'}")
    return 0 if worst < tol else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="talkconv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="throughput and peak memory per core and sequence length")
    b.add_argument("--core", action="append",
                   help="talk | attention | dynconv[:K]; repeatable (default talk)")
    b.add_argument("--n", action="append", type=int, help="sequence length; repeatable")
    b.add_argument("--batch", type=int, default=10)
    b.add_argument("--dim", type=int, default=1024)
    b.add_argument("--heads", type=int, default=16)
    b.add_argument("--iters", type=int, default=20)
    b.add_argument("--warmup", type=int, default=2)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--l-max", type=int, default=15)
    b.add_argument("--r-max", type=int, default=15)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    b.add_argument("--out", help="CSV output path")
    b.set_defaults(func=_bench)

    g = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--trials", type=int, default=50)
    g.set_defaults(func=_gradcheck)

    t = sub.add_parser("train", help="train on a synthetic task or a text file")
    t.add_argument("--config", help="JSON file with TrainConfig fields")
    t.add_argument("--seed", type=int)
    t.add_argument("--dtype", choices=["f32", "f64"])
    t.add_argument("--out", help="report CSV path (overrides report_path)")
    t.set_defaults(func=_train)

    o = sub.add_parser("oracle-diff", help="compare the table kernel with the brute-force oracle")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--instances", type=int, default=500)
    o.add_argument("--dtype", choices=["f32", "f64"], default="f64")
    o.set_defaults(func=_oracle_diff)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, MemoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
