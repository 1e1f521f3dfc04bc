"""Benchmark harness: synthetic instances, solver comparisons, CSV results.

The synthetic regression task draws all factor entries i.i.d. from a normal
distribution with mean 1 and variance 0.001 and fits the all-ones response;
the Tucker task decomposes either a tensor file or a generated noisy
low-rank tensor.  Each run emits one CSV row per (solver, seed) cell with
loss, ratio against the exact optimum, sampled row count, and wall time.
"""

from __future__ import annotations

import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, KronsolveError
from .solvers import (
    RegressionConfig,
    SolveReport,
    fast_kronecker_regression,
    kronmatmul_svd_solve,
    naive_normal_solve,
    sketch_and_solve_ridge,
)
from .tensor import multi_mode_product
from .tensor_io import write_results_csv
from .tucker import AlsReport, TuckerModel, tucker_als

SYNTH_MEAN = 1.0
SYNTH_VARIANCE = 0.001

REGRESSION_SOLVERS = ("naive", "kronmatmul", "sketch-solve", "fast")
EXACT_SOLVERS = {"naive", "kronmatmul"}

RESULT_HEADER = ("solver", "n", "d", "order", "seed", "loss", "ratio",
                 "rows_sampled", "wall_time", "status")

TUCKER_HEADER = ("sweep", "loss", "rre", "sweep_seconds")


@dataclass
class ExperimentSpec:
    """One benchmark request (either kind); defaults match the synthetic study."""

    kind: str = "synth-regression"
    n: int = 128
    d: int = 8
    order: int = 2
    lam: float = 1e-3
    eps: float = 0.1
    delta: float = 0.01
    alpha: float = 1e-5
    seeds: tuple[int, ...] = (0,)
    solvers: tuple[str, ...] = REGRESSION_SOLVERS
    repeats: int = 1
    force: bool = False
    parallel: bool = False
    # tucker-only fields
    tensor_path: str | None = None
    core_shape: tuple[int, ...] = ()
    sweeps: int = 5
    solver_mode: str = "exact"
    synth_shape: tuple[int, ...] = ()
    synth_rank: tuple[int, ...] = ()
    noise: float = 0.01

    def __post_init__(self):
        if self.kind not in ("synth-regression", "tucker"):
            raise InvalidInputError(f"unknown experiment kind {self.kind!r}")
        if self.kind == "synth-regression":
            if self.n < self.d or self.d < 1:
                raise InvalidInputError("need n >= d >= 1")
            if self.order < 1:
                raise InvalidInputError("order must be >= 1")
            unknown = set(self.solvers) - set(REGRESSION_SOLVERS)
            if unknown:
                raise InvalidInputError(f"unknown solvers: {sorted(unknown)}")
        if self.repeats < 1:
            raise InvalidInputError("repeats must be >= 1")
        if not self.seeds:
            raise InvalidInputError("need at least one seed")


@dataclass(frozen=True)
class ResultRow:
    solver: str
    n: int
    d: int
    order: int
    seed: int
    loss: float
    ratio: float
    rows_sampled: int
    wall_time: float
    status: str = "ok"

    def as_csv(self) -> tuple:
        return (self.solver, self.n, self.d, self.order, self.seed, self.loss,
                self.ratio, self.rows_sampled, self.wall_time, self.status)


def generate_synth_regression(n: int, d: int, order: int, seed,
                              ) -> tuple[list[np.ndarray], np.ndarray]:
    """Factors with i.i.d. Normal(1, 0.001) entries and the all-ones target."""
    if n < d or d < 1:
        raise InvalidInputError("need n >= d >= 1")
    rng = np.random.default_rng(seed)
    factors = [rng.normal(SYNTH_MEAN, math.sqrt(SYNTH_VARIANCE), (n, d))
               for _ in range(order)]
    b = np.ones(n**order)
    return factors, b


def generate_synth_tucker(shape: Sequence[int], rank: Sequence[int],
                          noise: float, seed) -> np.ndarray:
    """Noisy low-rank tensor: random model expansion plus relative noise."""
    rng = np.random.default_rng(seed)
    core = rng.standard_normal(tuple(rank))
    factors = []
    for i_n, r_n in zip(shape, rank):
        q, _ = np.linalg.qr(rng.standard_normal((i_n, r_n)))
        factors.append(q)
    x = multi_mode_product(core, factors)
    if noise > 0:
        scale = noise * float(np.linalg.norm(x)) / math.sqrt(x.size)
        x = x + rng.standard_normal(x.shape) * scale
    return x


def _median_run(fn: Callable[[], SolveReport], repeats: int) -> SolveReport:
    """Run ``fn`` repeatedly and keep the median-wall-time report."""
    reports = [fn() for _ in range(repeats)]
    reports.sort(key=lambda r: r.wall_time)
    median = reports[len(reports) // 2]
    if repeats % 2 == 0:
        wall = statistics.median(r.wall_time for r in reports)
        median = SolveReport(median.solution, median.loss, median.iterations,
                             median.sample_count, wall)
    return median


def _run_cell(spec: ExperimentSpec, solver: str, seed: int) -> ResultRow:
    factors, b = generate_synth_regression(spec.n, spec.d, spec.order, seed)
    guard = None if spec.force else 10**8
    config = RegressionConfig(eps=spec.eps, delta=spec.delta, lam=spec.lam,
                              alpha=spec.alpha, seed=seed)
    rows = spec.n**spec.order
    try:
        if solver == "naive":
            if guard is not None and rows > guard:
                raise KronsolveError(
                    f"instance has {rows} rows (guard {guard}); use force")
            report = _median_run(
                lambda: naive_normal_solve(factors, b, spec.lam,
                                           max_dense_entries=guard),
                spec.repeats)
        elif solver == "kronmatmul":
            if guard is not None and rows > guard:
                raise KronsolveError(
                    f"instance has {rows} rows (guard {guard}); use force")
            report = _median_run(
                lambda: kronmatmul_svd_solve(factors, b, spec.lam), spec.repeats)
        elif solver == "sketch-solve":
            report = _median_run(
                lambda: sketch_and_solve_ridge(factors, b, config,
                                               max_dense_entries=guard),
                spec.repeats)
        elif solver == "fast":
            report = _median_run(
                lambda: fast_kronecker_regression(factors, b, config),
                spec.repeats)
        else:
            raise InvalidInputError(f"unknown solver {solver!r}")
    except (KronsolveError, np.linalg.LinAlgError) as exc:
        return ResultRow(solver=solver, n=spec.n, d=spec.d, order=spec.order,
                         seed=seed, loss=math.nan, ratio=math.nan,
                         rows_sampled=0, wall_time=math.nan,
                         status=f"error: {exc}")
    return ResultRow(solver=solver, n=spec.n, d=spec.d, order=spec.order,
                     seed=seed, loss=report.loss, ratio=math.nan,
                     rows_sampled=report.sample_count,
                     wall_time=report.wall_time)


def run_regression_experiment(spec: ExperimentSpec,
                              out_path=None) -> list[ResultRow]:
    """Run every (solver, seed) cell; ratios are filled in against the exact
    optimum for the same seed when an exact solver is part of the run."""
    if spec.kind != "synth-regression":
        raise InvalidInputError("spec is not a synth-regression experiment")
    cells = [(solver, seed) for seed in spec.seeds for solver in spec.solvers]
    if spec.parallel:
        with ThreadPoolExecutor() as pool:
            rows = list(pool.map(lambda c: _run_cell(spec, *c), cells))
    else:
        rows = [_run_cell(spec, solver, seed) for solver, seed in cells]

    opt_by_seed: dict[int, float] = {}
    for row in rows:
        if row.solver in EXACT_SOLVERS and row.status == "ok":
            opt_by_seed.setdefault(row.seed, row.loss)
    final = []
    for row in rows:
        opt = opt_by_seed.get(row.seed)
        ratio = row.loss / opt if (opt and row.status == "ok") else math.nan
        final.append(replace(row, ratio=ratio))
    if out_path is not None:
        write_results_csv(out_path, RESULT_HEADER, [r.as_csv() for r in final])
    return final


def run_tucker_experiment(spec: ExperimentSpec, out_path=None,
                          ) -> tuple[TuckerModel, AlsReport]:
    """Decompose the requested tensor and emit one CSV row per sweep."""
    if spec.kind != "tucker":
        raise InvalidInputError("spec is not a tucker experiment")
    if spec.tensor_path is not None:
        from .tensor_io import read_tensor
        try:
            x = read_tensor(spec.tensor_path)
        except OSError as exc:
            raise InvalidInputError(
                f"cannot read tensor file {spec.tensor_path}: {exc}") from exc
    elif spec.synth_shape:
        if not spec.synth_rank:
            raise InvalidInputError("synthetic tensors need a true rank")
        x = generate_synth_tucker(spec.synth_shape, spec.synth_rank, spec.noise,
                                  spec.seeds[0])
    else:
        raise InvalidInputError("need either a tensor file or synthetic dims")
    if not spec.core_shape:
        raise InvalidInputError("core shape is required")
    config = RegressionConfig(eps=spec.eps, delta=spec.delta, lam=spec.lam,
                              alpha=spec.alpha, seed=spec.seeds[0])
    model, report = tucker_als(x, spec.core_shape, lam=spec.lam,
                               sweeps=spec.sweeps, solver_mode=spec.solver_mode,
                               config=config)
    if out_path is not None:
        rows = [(k + 1, loss, report.sweep_rres[k], report.sweep_seconds[k])
                for k, loss in enumerate(report.sweep_losses)]
        write_results_csv(out_path, TUCKER_HEADER, rows)
    return model, report
