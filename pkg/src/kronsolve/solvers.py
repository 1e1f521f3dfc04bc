"""Kronecker ridge regression solvers.

Four routes to ``argmin_x ||K x - b||^2 + lam ||x||^2`` for an implicit
``K = A1 kron ... kron AN``:

* :func:`naive_normal_solve` densifies ``K^T K`` (as a Kronecker product of
  factor Grams) and pseudo-inverts it.
* :func:`kronmatmul_svd_solve` composes the factor SVDs and never forms an
  R x R matrix; exact, and the reference for OPT.
* :func:`sketch_and_solve_ridge` samples rows of ``K`` by their leverage
  scores and solves the sketched normal equation directly.
* :func:`fast_kronecker_regression` solves the *sketched* problem by damped
  Richardson iteration preconditioned with the eigendecomposition of the
  *unsketched* normal matrix, so every step costs only sparse Kronecker
  applies.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from functools import reduce
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, NumericalFailureError, SizeGuardError
from .kron import (
    check_factors,
    kron_mat_mul,
    kron_operator_shape,
    kron_vec_square,
    sketch_rows_of_kron,
    sketched_kron_apply,
    sketched_kron_transpose_apply,
    sparse_diagonal_from_sketch,
)
from .leverage import (
    JL_LOG_FACTOR,
    REGRESSION_SAMPLE_CONSTANT,
    LeverageScores,
    approx_leverage_scores_jl,
    build_product_sampler,
    regression_sample_count,
    ridge_leverage_scores,
    sample_rows,
    spectral_approx_rows,
    spectral_sample_count,
)
from .tensor import CompactSvd, as_matrix, compact_svd

DEFAULT_DENSE_GUARD = 10**8

# Divergence heuristic: this many consecutive residual increases by this
# total growth factor aborts the iteration.
_DIVERGENCE_WINDOW = 5
_DIVERGENCE_GROWTH = 10.0


@dataclass(frozen=True)
class RegressionConfig:
    """Knobs shared by the stochastic solvers.

    ``mode`` selects between the theoretical sample counts (``alpha`` forced
    to 1) and practical ones scaled by ``alpha``.  ``damping=None`` uses the
    default step size ``1 - sqrt(eps)``; ``max_richardson_iters=None`` uses
    ``8 * ceil(ln(1/eps))``.
    """

    eps: float = 0.25
    delta: float = 0.05
    lam: float = 0.0
    alpha: float = 1.0
    mode: str = "practical"
    max_richardson_iters: int | None = None
    residual_tol: float = 1e-9
    seed: int = 0
    damping: float | None = None
    jl_log_factor: float = JL_LOG_FACTOR
    share_row_sketch: bool = False

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise InvalidInputError(f"eps must be in (0, 1), got {self.eps}")
        if not 0.0 < self.delta < 1.0:
            raise InvalidInputError(f"delta must be in (0, 1), got {self.delta}")
        if self.lam < 0.0:
            raise InvalidInputError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidInputError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.mode not in ("theoretical", "practical"):
            raise InvalidInputError(f"unknown mode {self.mode!r}")
        if self.residual_tol <= 0.0:
            raise InvalidInputError("residual_tol must be positive")

    @property
    def effective_alpha(self) -> float:
        return 1.0 if self.mode == "theoretical" else self.alpha

    @property
    def effective_damping(self) -> float:
        return (1.0 - math.sqrt(self.eps)) if self.damping is None else self.damping

    @property
    def effective_max_iters(self) -> int:
        if self.max_richardson_iters is not None:
            return self.max_richardson_iters
        return 8 * max(1, math.ceil(math.log(1.0 / self.eps)))

    def with_lam(self, lam: float) -> "RegressionConfig":
        return replace(self, lam=lam)


@dataclass(frozen=True)
class SolveReport:
    """Solution vector plus bookkeeping for benchmark tables."""

    solution: np.ndarray
    loss: float
    iterations: int
    sample_count: int
    wall_time: float


@dataclass(frozen=True)
class FactorGram:
    """Eigendecomposition ``A^T A = v @ diag(eigenvalues) @ v.T``.

    ``v`` is square orthogonal and ``eigenvalues`` is descending and clipped
    at zero, so Kronecker-diagonal pseudo-inverses stay well defined.
    """

    v: np.ndarray
    eigenvalues: np.ndarray
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.v.shape[0]


def factor_gram(a, assume_gram: bool = False) -> FactorGram:
    """Eigendecomposition of ``a.T @ a`` (or of ``a`` itself if it is a Gram)."""
    a = as_matrix(a)
    g = a if assume_gram else a.T @ a
    g = 0.5 * (g + g.T)
    w, v = np.linalg.eigh(g)
    w = np.clip(w[::-1], 0.0, None)
    return FactorGram(v=np.ascontiguousarray(v[:, ::-1]), eigenvalues=w, matrix=g)


@dataclass(frozen=True)
class FactorCache:
    """Per-factor spectral data reused across solves: thin SVD plus Gram."""

    svd: CompactSvd
    gram: FactorGram


def build_factor_cache(a) -> FactorCache:
    a = as_matrix(a)
    return FactorCache(svd=compact_svd(a), gram=factor_gram(a))


@dataclass(frozen=True)
class KronPreconditioner:
    """Decomposed inverse normal matrix ``(V kron ...) D (V kron ...)^T``.

    ``d_diag`` holds ``(eig_1 kron ... kron eig_N + lam)^+`` entries (zero
    where the eigenvalue product and ``lam`` both vanish), so applying the
    preconditioner costs one diagonal scaling between two square Kronecker
    multiplies.
    """

    v_factors: tuple[np.ndarray, ...]
    d_diag: np.ndarray
    lam: float

    def apply(self, x: np.ndarray) -> np.ndarray:
        t = kron_vec_square([v.T for v in self.v_factors], x)
        t = t * self.d_diag
        return kron_vec_square(list(self.v_factors), t)


def pseudo_reciprocal(d: np.ndarray) -> np.ndarray:
    """Entrywise ``1/d`` with zeros kept at zero (pseudoinverse convention)."""
    out = np.zeros_like(d)
    nz = d > 0
    out[nz] = 1.0 / d[nz]
    return out


def build_kron_preconditioner(grams: Sequence[FactorGram], lam: float) -> KronPreconditioner:
    eig = reduce(np.kron, [g.eigenvalues for g in grams])
    d_diag = pseudo_reciprocal(eig + lam)
    return KronPreconditioner(v_factors=tuple(g.v for g in grams),
                              d_diag=d_diag, lam=lam)


def richardson_solve(apply_normal: Callable[[np.ndarray], np.ndarray],
                     apply_precond: Callable[[np.ndarray], np.ndarray],
                     rhs: np.ndarray,
                     damping: float,
                     config: RegressionConfig,
                     x0: np.ndarray | None = None,
                     callback: Callable[[np.ndarray], None] | None = None,
                     ) -> tuple[np.ndarray, int]:
    """Damped preconditioned Richardson iteration for normal equations.

    Iterates ``x <- x - damping * M^+ (apply_normal(x) - rhs)`` from zero
    (or ``x0``) until the preconditioned residual drops below
    ``config.residual_tol`` relative to the preconditioned right-hand side,
    or the iteration budget runs out.  Returns the final iterate and the
    number of updates applied.

    Raises
    ------
    NumericalFailureError
        If the residual grows 10x over 5 consecutive iterations.
    """
    rhs = np.asarray(rhs, dtype=np.float64).reshape(-1)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != rhs.shape:
        raise InvalidInputError("x0 must match the right-hand side length")
    scale = float(np.linalg.norm(apply_precond(rhs)))
    tol = config.residual_tol * max(scale, np.finfo(float).tiny)
    history: list[float] = []
    iterations = 0
    for _ in range(config.effective_max_iters):
        step = apply_precond(apply_normal(x) - rhs)
        norm = float(np.linalg.norm(step))
        history.append(norm)
        if norm <= tol:
            break
        if len(history) > _DIVERGENCE_WINDOW:
            window = history[-(_DIVERGENCE_WINDOW + 1):]
            if (all(window[i + 1] > window[i] for i in range(_DIVERGENCE_WINDOW))
                    and window[-1] > _DIVERGENCE_GROWTH * window[0]):
                raise NumericalFailureError(
                    "Richardson iteration diverged",
                    iterations=iterations,
                    diagnostics={"residual_history": history})
        x = x - damping * step
        iterations += 1
        if callback is not None:
            callback(x)
    return x, iterations


def ridge_loss(factors: Sequence[np.ndarray], x, b, lam: float) -> float:
    """Evaluate ``||K x - b||^2 + lam ||x||^2`` without materializing ``K``."""
    factors = check_factors(factors)
    rows, cols = kron_operator_shape(factors)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if x.size != cols or b.size != rows:
        raise InvalidInputError(
            f"x/b of lengths {x.size}/{b.size} do not match operator "
            f"{rows}x{cols}")
    r = kron_mat_mul(factors, x) - b
    return float(r @ r + lam * (x @ x))


def _validated_problem(factors, b):
    factors = check_factors(factors)
    rows, cols = kron_operator_shape(factors)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if b.size != rows:
        raise InvalidInputError(f"b has length {b.size}, operator has {rows} rows")
    for n, a in enumerate(factors):
        if not np.any(a):
            raise InvalidInputError(f"factor {n} is identically zero")
    return factors, b, rows, cols


def naive_normal_solve(factors: Sequence[np.ndarray], b, lam: float,
                       max_dense_entries: int | None = DEFAULT_DENSE_GUARD,
                       ) -> SolveReport:
    """Exact ridge solution via the densified normal matrix.

    ``K^T K`` is built as the Kronecker product of the factor Gram matrices
    and pseudo-inverted; ``K^T b`` uses the implicit transpose multiply.
    Guarded: refuses when ``(prod R_n)^2`` exceeds ``max_dense_entries``.
    """
    factors, b, rows, cols = _validated_problem(factors, b)
    if lam < 0:
        raise InvalidInputError(f"lambda must be >= 0, got {lam}")
    if max_dense_entries is not None and cols * cols > max_dense_entries:
        raise SizeGuardError(
            f"normal matrix would hold {cols}x{cols} entries "
            f"(guard: {max_dense_entries})")
    t0 = time.perf_counter()
    gram = reduce(np.kron, [a.T @ a for a in factors])
    ktb = kron_mat_mul([a.T for a in factors], b)
    x = np.linalg.pinv(gram + lam * np.eye(cols)) @ ktb
    wall = time.perf_counter() - t0
    return SolveReport(solution=x, loss=ridge_loss(factors, x, b, lam),
                       iterations=0, sample_count=0, wall_time=wall)


def kronmatmul_svd_solve(factors: Sequence[np.ndarray], b, lam: float) -> SolveReport:
    """Exact ridge solution from factor SVDs and implicit Kronecker products.

    ``x = (V kron ...) diag(sigma/(sigma^2+lam)) (U kron ...)^T b`` where the
    per-factor compact SVDs compose into a compact SVD of ``K``; agrees with
    :func:`naive_normal_solve` for every ``lam >= 0``.
    """
    factors, b, rows, cols = _validated_problem(factors, b)
    if lam < 0:
        raise InvalidInputError(f"lambda must be >= 0, got {lam}")
    t0 = time.perf_counter()
    svds = [compact_svd(a) for a in factors]
    t = kron_mat_mul([s.u.T for s in svds], b)
    sigma = reduce(np.kron, [s.sigma for s in svds])
    t = t * (sigma / (sigma**2 + lam))
    x = kron_mat_mul([s.v for s in svds], t)
    wall = time.perf_counter() - t0
    return SolveReport(solution=x, loss=ridge_loss(factors, x, b, lam),
                       iterations=0, sample_count=0, wall_time=wall)


def exact_factor_scores(factors: Sequence[np.ndarray],
                        caches: Sequence[FactorCache] | None = None,
                        ) -> list[LeverageScores]:
    """Exact statistical leverage scores of each factor."""
    out = []
    for n, a in enumerate(factors):
        svd = caches[n].svd if caches is not None else compact_svd(a)
        out.append(ridge_leverage_scores(svd, 0.0))
    return out


def sketch_and_solve_ridge(factors: Sequence[np.ndarray], b,
                           config: RegressionConfig,
                           sketch=None,
                           max_dense_entries: int | None = DEFAULT_DENSE_GUARD,
                           ) -> SolveReport:
    """Sketch-and-solve baseline: solve the sampled normal equation directly.

    Rows of ``K`` are drawn from the exact leverage-score product
    distribution (``ceil(alpha * 1680 R ln(40R) / eps)`` of them), the
    sketched matrix is materialized, and
    ``((SK)^T SK + lam I)^+ (SK)^T S b`` is returned.  ``sketch`` overrides
    the drawn row sketch (test hook).
    """
    factors, b, rows, cols = _validated_problem(factors, b)
    t0 = time.perf_counter()
    if sketch is None:
        sampler = build_product_sampler(exact_factor_scores(factors))
        s = max(1, math.ceil(config.effective_alpha
                             * regression_sample_count(cols, config.eps)))
        sketch = sample_rows(sampler, s, config.seed)
    s = sketch.sample_count
    if max_dense_entries is not None and max(s * cols, cols * cols) > max_dense_entries:
        raise SizeGuardError(
            f"sketched matrix would hold {s}x{cols} entries "
            f"(guard: {max_dense_entries})")
    sk = sketch_rows_of_kron(factors, sketch)
    if sketch.indices.ndim == 2:
        flat = np.ravel_multi_index(tuple(sketch.indices.T),
                                    tuple(a.shape[0] for a in factors))
    else:
        flat = sketch.indices
    sb = sketch.weights * b[flat]
    x = np.linalg.pinv(sk.T @ sk + config.lam * np.eye(cols)) @ (sk.T @ sb)
    wall = time.perf_counter() - t0
    return SolveReport(solution=x, loss=ridge_loss(factors, x, b, config.lam),
                       iterations=0, sample_count=s, wall_time=wall)


def fast_kronecker_regression(factors: Sequence[np.ndarray], b,
                              config: RegressionConfig,
                              caches: Sequence[FactorCache] | None = None,
                              ) -> SolveReport:
    """(1+eps)-approximate Kronecker ridge regression in subquadratic time.

    Pipeline: per-factor row-sampled spectral approximations at accuracy
    ``ln(1+eps/4)/N`` each, Gram eigendecompositions for the decomposed
    preconditioner, Johnson-Lindenstrauss leverage-score estimates feeding a
    product-distribution row sampler, then
    ``ceil(alpha * 1680 R ln(40R) ln(1/delta) / eps)`` sampled rows solved by
    damped preconditioned Richardson iteration where every operator
    application exploits sketch sparsity and Kronecker structure.

    With ``caches`` supplied (one per factor) the per-factor preprocessing is
    skipped: exact Gram eigendecompositions and exact leverage scores are
    read from the cache.  When the sample count reaches the actual row count
    the sketch is pointless and the exact SVD solver runs instead.

    ``wall_time`` covers the solve; the reported loss is evaluated exactly
    afterwards.
    """
    factors, b, rows, cols = _validated_problem(factors, b)
    if not 0.0 < config.eps <= 0.25:
        raise InvalidInputError(
            f"fast regression requires eps in (0, 1/4], got {config.eps}")
    if caches is not None and len(caches) != len(factors):
        raise InvalidInputError("need one cache entry per factor")
    n_factors = len(factors)
    lam = config.lam
    alpha = config.effective_alpha

    t0 = time.perf_counter()
    s = max(1, math.ceil(alpha * REGRESSION_SAMPLE_CONSTANT * cols
                         * math.log(40 * cols) * math.log(1.0 / config.delta)
                         / config.eps))
    if s >= rows:
        # sketching cannot help: more samples than rows
        exact = kronmatmul_svd_solve(factors, b, lam)
        wall = time.perf_counter() - t0
        return SolveReport(solution=exact.solution, loss=exact.loss,
                           iterations=0, sample_count=0, wall_time=wall)

    seed_root = np.random.SeedSequence(config.seed)
    seeds = seed_root.spawn(2 * n_factors + 1)

    grams: list[FactorGram] = []
    scores: list[LeverageScores] = []
    if caches is not None:
        for cache in caches:
            grams.append(cache.gram)
            scores.append(ridge_leverage_scores(cache.svd, 0.0))
    else:
        # One-sided per-factor target (1 + ln(1+eps/4)/N); realized by a
        # two-sided sketch at eps' = t/(2+t) rescaled by 1/sqrt(1-eps').
        eps_one = math.log1p(config.eps / 4.0) / n_factors
        eps_two = eps_one / (2.0 + eps_one)
        delta_n = config.delta / (2.0 * n_factors)
        eps_jl = 4.0 * math.log1p(config.eps / 4.0) / n_factors
        for n, a in enumerate(factors):
            s_n = math.ceil(alpha * spectral_sample_count(a.shape[1], eps_two, delta_n))
            if s_n >= a.shape[0]:
                a_tilde = a
            else:
                sa = spectral_approx_rows(a, eps_two, delta_n, seeds[2 * n],
                                          alpha=alpha)
                a_tilde = sa / math.sqrt(1.0 - eps_two)
            gram_tilde = a_tilde.T @ a_tilde
            grams.append(factor_gram(gram_tilde, assume_gram=True))
            scores.append(approx_leverage_scores_jl(
                a, a_tilde, gram_tilde, eps_jl, seeds[2 * n + 1],
                log_factor=config.jl_log_factor))

    sampler = build_product_sampler(scores)
    precond = build_kron_preconditioner(grams, lam)

    sketch = sample_rows(sampler, s, seeds[-1])
    row_shape = tuple(a.shape[0] for a in factors)
    sdiag = sparse_diagonal_from_sketch(sketch, row_shape)
    b_at = b[sdiag.indices]
    rhs = sketched_kron_transpose_apply(factors, sdiag, sdiag.values * b_at)

    def apply_normal(x: np.ndarray) -> np.ndarray:
        sk = sketched_kron_apply(factors, sdiag, x)
        return sketched_kron_transpose_apply(factors, sdiag, sk) + lam * x

    x, iters = richardson_solve(apply_normal, precond.apply, rhs,
                                config.effective_damping, config)
    wall = time.perf_counter() - t0
    return SolveReport(solution=x, loss=ridge_loss(factors, x, b, lam),
                       iterations=iters, sample_count=s, wall_time=wall)
