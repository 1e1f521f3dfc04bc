"""Command-line harness.

Subcommands:

* ``synth-regression`` benchmarks the solver set on the synthetic Kronecker
  ridge task and writes one CSV row per (solver, seed) cell.
* ``tucker`` decomposes a tensor file (or a generated noisy low-rank tensor)
  and writes one CSV row per sweep.
* ``check`` runs the built-in oracle-equivalence suite and exits nonzero on
  any failure.

``KRONSOLVE_THREADS`` caps the linear-algebra thread pools.
"""

from __future__ import annotations

import argparse
import os
import sys

_THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _cap_threads() -> None:
    value = os.environ.get("KRONSOLVE_THREADS")
    if not value:
        return
    try:
        limit = max(1, int(value))
    except ValueError:
        print(f"kronsolve: ignoring non-integer KRONSOLVE_THREADS={value!r}",
              file=sys.stderr)
        return
    for var in _THREAD_ENV_VARS:
        os.environ.setdefault(var, str(limit))
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limit)
    except ImportError:
        pass


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kronsolve",
        description="Kronecker ridge regression and Tucker ALS benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    reg = sub.add_parser("synth-regression",
                         help="benchmark solvers on the synthetic ridge task")
    reg.add_argument("--n", type=int, default=128, help="rows per factor")
    reg.add_argument("--d", type=int, default=8, help="columns per factor")
    reg.add_argument("--order", type=int, default=2, help="number of factors")
    reg.add_argument("--eps", type=float, default=0.1)
    reg.add_argument("--delta", type=float, default=0.01)
    reg.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    reg.add_argument("--alpha", type=float, default=1e-5,
                     help="sample-count scale for the sketching solvers")
    reg.add_argument("--seeds", type=_parse_int_tuple, default=(0,),
                     help="comma-separated seed list")
    reg.add_argument("--solvers", default="naive,kronmatmul,sketch-solve,fast",
                     help="comma-separated subset of "
                          "naive,kronmatmul,sketch-solve,fast")
    reg.add_argument("--repeats", type=int, default=1,
                     help="timing repetitions per cell (median reported)")
    reg.add_argument("--parallel", action="store_true",
                     help="run (solver, seed) cells concurrently")
    reg.add_argument("--force", action="store_true",
                     help="disable the exact-solver size guards")
    reg.add_argument("--out", required=True, help="output CSV path")

    tuck = sub.add_parser("tucker", help="L2-regularized Tucker ALS")
    tuck.add_argument("--input", help="tensor file to decompose")
    tuck.add_argument("--synthetic", type=_parse_int_tuple, default=(),
                      help="generate a tensor of these dims instead of --input")
    tuck.add_argument("--true-rank", type=_parse_int_tuple, default=(),
                      help="multilinear rank of the generated tensor")
    tuck.add_argument("--noise", type=float, default=0.01,
                      help="relative noise level of the generated tensor")
    tuck.add_argument("--core", type=_parse_int_tuple, required=True,
                      help="core shape, e.g. 4,4,4")
    tuck.add_argument("--lambda", dest="lam", type=float, default=0.0)
    tuck.add_argument("--eps", type=float, default=0.1)
    tuck.add_argument("--delta", type=float, default=0.01)
    tuck.add_argument("--alpha", type=float, default=1.0)
    tuck.add_argument("--mode", choices=("exact", "fast"), default="exact")
    tuck.add_argument("--sweeps", type=int, default=5)
    tuck.add_argument("--seed", type=int, default=0)
    tuck.add_argument("--out", required=True, help="output CSV path")

    sub.add_parser("check", help="run the oracle-equivalence suite")
    return parser


def _cmd_synth_regression(args) -> int:
    from .experiments import ExperimentSpec, run_regression_experiment

    spec = ExperimentSpec(
        kind="synth-regression", n=args.n, d=args.d, order=args.order,
        lam=args.lam, eps=args.eps, delta=args.delta, alpha=args.alpha,
        seeds=tuple(args.seeds),
        solvers=tuple(s for s in args.solvers.split(",") if s),
        repeats=args.repeats, force=args.force, parallel=args.parallel)
    rows = run_regression_experiment(spec, out_path=args.out)
    failures = [r for r in rows if r.status != "ok"]
    print(f"wrote {len(rows)} rows to {args.out}"
          + (f" ({len(failures)} solver errors recorded)" if failures else ""))
    return 0


def _cmd_tucker(args) -> int:
    from .experiments import ExperimentSpec, run_tucker_experiment

    spec = ExperimentSpec(
        kind="tucker", tensor_path=args.input, core_shape=tuple(args.core),
        lam=args.lam, eps=args.eps, delta=args.delta, alpha=args.alpha,
        seeds=(args.seed,), sweeps=args.sweeps, solver_mode=args.mode,
        synth_shape=tuple(args.synthetic), synth_rank=tuple(args.true_rank),
        noise=args.noise)
    model, report = run_tucker_experiment(spec, out_path=args.out)
    print(f"final loss {report.sweep_losses[-1]:.6g}, RRE {report.rre:.6g}, "
          f"mean sweep {report.mean_sweep_seconds:.4f}s; wrote {args.out}")
    return 0


def _cmd_check(_args) -> int:
    from . import check

    return check.run_checks()


def main(argv=None) -> int:
    _cap_threads()
    args = build_parser().parse_args(argv)
    if args.command == "synth-regression":
        return _cmd_synth_regression(args)
    if args.command == "tucker":
        return _cmd_tucker(args)
    if args.command == "check":
        return _cmd_check(args)
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
