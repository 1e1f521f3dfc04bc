"""L2-regularized Tucker decomposition by alternating least squares.

Each sweep updates every factor matrix and then the core tensor; both block
updates are ridge regression problems against an implicit Kronecker design
matrix.  ``exact`` mode solves them exactly (block coordinate descent, so
the regularized loss is non-increasing); ``fast`` mode runs the sketched
solvers row by row, substituting each factor-row problem by an
equality-constrained one whose penalized relaxation is preconditioned via a
rank-R_n Woodbury correction.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, NumericalFailureError, SizeGuardError
from .kron import kron_mat_mul, kron_vec_square, sketched_kron_apply, \
    sketched_kron_transpose_apply, sparse_diagonal_from_sketch
from .leverage import REGRESSION_SAMPLE_CONSTANT, build_product_sampler, \
    ridge_leverage_scores, sample_rows
from .solvers import (
    DEFAULT_DENSE_GUARD,
    FactorCache,
    RegressionConfig,
    build_factor_cache,
    fast_kronecker_regression,
    kronmatmul_svd_solve,
    pseudo_reciprocal,
    richardson_solve,
)
from .tensor import as_tensor, multi_mode_product, pseudo_inverse, unfold, vectorize, \
    devectorize

POWER_ITERATION_MAX = 100
POWER_ITERATION_TOL = 1e-6
PENALTY_SAFETY_MARGIN = 1.05


@dataclass
class TuckerModel:
    """Core tensor plus one loading matrix per mode."""

    core: np.ndarray
    factors: list[np.ndarray]
    lam: float = 0.0

    def __post_init__(self):
        self.core = as_tensor(self.core, "core")
        if len(self.factors) != self.core.ndim:
            raise InvalidInputError(
                f"core has order {self.core.ndim} but got {len(self.factors)} factors")
        self.factors = [np.asarray(a, dtype=np.float64) for a in self.factors]
        for n, a in enumerate(self.factors):
            if a.ndim != 2 or a.shape[1] != self.core.shape[n]:
                raise InvalidInputError(
                    f"factor {n} of shape {a.shape} does not match core dim "
                    f"{self.core.shape[n]}")
            if a.shape[0] < a.shape[1]:
                raise InvalidInputError(
                    f"factor {n} is {a.shape}; ranks above the dimension are "
                    f"not supported")
        if self.lam < 0:
            raise InvalidInputError(f"lambda must be >= 0, got {self.lam}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.shape[0] for a in self.factors)

    @property
    def core_shape(self) -> tuple[int, ...]:
        return self.core.shape


def reconstruct(model: TuckerModel) -> np.ndarray:
    """Expand the model: core multiplied by every factor along its mode."""
    return multi_mode_product(model.core, model.factors)


def relative_error(model: TuckerModel, x) -> float:
    """Relative reconstruction error ``||Xhat - X||_F^2 / ||X||_F^2``."""
    x = as_tensor(x)
    num = float(np.sum((reconstruct(model) - x) ** 2))
    den = float(np.sum(x**2))
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def regularized_loss(model: TuckerModel, x) -> float:
    """Squared reconstruction error plus lam times all squared Frobenius norms."""
    x = as_tensor(x)
    err = float(np.sum((reconstruct(model) - x) ** 2))
    reg = float(np.sum(model.core**2))
    reg += sum(float(np.sum(a**2)) for a in model.factors)
    return err + model.lam * reg


def _other_factors(model: TuckerModel, n: int) -> list[np.ndarray]:
    return [a for k, a in enumerate(model.factors) if k != n]


def core_update(model: TuckerModel, x, mode: str = "exact",
                config: RegressionConfig | None = None,
                caches: Sequence[FactorCache] | None = None) -> np.ndarray:
    """Solve the core regression at fixed factors; returns the new core.

    ``exact`` uses the SVD solver; ``fast`` runs the sketched solver, reusing
    cached per-factor Gram SVDs when provided.
    """
    x = as_tensor(x)
    if x.shape != model.shape:
        raise InvalidInputError(f"tensor shape {x.shape} != model shape {model.shape}")
    if mode == "exact":
        report = kronmatmul_svd_solve(model.factors, vectorize(x), model.lam)
    elif mode == "fast":
        cfg = (config or RegressionConfig()).with_lam(model.lam)
        report = fast_kronecker_regression(model.factors, vectorize(x), cfg,
                                           caches=caches)
    else:
        raise InvalidInputError(f"unknown core update mode {mode!r}")
    return devectorize(report.solution, model.core_shape)


def naive_factor_update(model: TuckerModel, x, n: int,
                        max_dense_entries: int | None = DEFAULT_DENSE_GUARD,
                        ) -> np.ndarray:
    """Exact ridge update of factor ``n``: every row solved via the normal
    equation ``(KK^T + lam I)^+ K b_i^T`` with ``K = G_(n) (kron of others)^T``.

    ``KK^T`` is assembled through the factor-Gram Kronecker identity; the
    per-row right-hand sides use implicit Kronecker multiplies.
    """
    x = as_tensor(x)
    if x.shape != model.shape:
        raise InvalidInputError(f"tensor shape {x.shape} != model shape {model.shape}")
    if not 0 <= n < len(model.factors):
        raise InvalidInputError(f"mode {n} out of range")
    others = _other_factors(model, n)
    g_n = unfold(model.core, n)
    r_rest = g_n.shape[1]
    if max_dense_entries is not None and r_rest * r_rest > max_dense_entries:
        raise SizeGuardError(
            f"Gram Kronecker product would hold {r_rest}x{r_rest} entries "
            f"(guard: {max_dense_entries})")
    gram_rest = reduce(np.kron, [a.T @ a for a in others], np.ones((1, 1)))
    kkt = g_n @ gram_rest @ g_n.T
    b = unfold(x, n)
    # K B^T = G_(n) (kron of others)^T B^T, columns indexed by tensor rows
    rest_t = [a.T for a in others]
    kbt = g_n @ (kron_mat_mul(rest_t, b.T) if rest_t else b.T)
    rn = g_n.shape[0]
    y = np.linalg.pinv(kkt + model.lam * np.eye(rn)) @ kbt
    return y.T


@dataclass(frozen=True)
class FactorUpdateWorkspace:
    """Preassembled operators for the constrained factor-row solves.

    Holds the pseudoinverses of the core unfolding, the penalty weight for
    the nullspace constraint, and the Woodbury-corrected inverse of the
    penalized normal matrix, decomposed so one application costs Kronecker
    multiplies plus rank-``R_n`` corrections.
    """

    g_n: np.ndarray              # R_n x R_rest core unfolding
    gn_pinv: np.ndarray          # G^+        (R_rest x R_n)
    gnt_pinv: np.ndarray         # (G^T)^+    (R_n x R_rest)
    penalty_weight: float
    v_factors: tuple[np.ndarray, ...]
    base_diag: np.ndarray        # ((kron of Gram eigenvalues) + w)^+
    correction_left: np.ndarray  # G^+                (R_rest x R_n)
    correction_mid: np.ndarray   # Woodbury core inverse (R_n x R_n)
    correction_right: np.ndarray  # lam (G^T)^+ - w G  (R_n x R_rest)
    gram_matrices: tuple[np.ndarray, ...]

    @property
    def woodbury_core_inverse(self) -> np.ndarray:
        return self.correction_mid

    def constraint_projector(self) -> np.ndarray:
        """Dense ``N = I - G^T (G^T)^+`` (orthogonal projector, test aid)."""
        r = self.gn_pinv.shape[0]
        return np.eye(r) - self.g_n.T @ self.gnt_pinv

    def project_feasible(self, z: np.ndarray) -> np.ndarray:
        """Project onto the constraint set: ``(I - N^+ N) z = G^T (G^T)^+ z``."""
        return self.g_n.T @ (self.gnt_pinv @ z)

    def apply_base(self, z: np.ndarray) -> np.ndarray:
        """Apply ``(K^T K + w I)^+`` through the factor eigendecompositions."""
        t = kron_vec_square([v.T for v in self.v_factors], z)
        t = t * self.base_diag
        return kron_vec_square(list(self.v_factors), t)

    def apply(self, z: np.ndarray) -> np.ndarray:
        """Apply the Woodbury-corrected inverse of the penalized normal matrix."""
        base = self.apply_base(z)
        corr = self.correction_right @ base
        corr = self.correction_mid @ corr
        corr = self.correction_left @ corr
        return base - self.apply_base(corr)

    def apply_penalized_normal(self, z: np.ndarray) -> np.ndarray:
        """Exact ``(K^T K + w I + G^+ (lam (G^T)^+ - w G)) z`` (no sketch)."""
        t = kron_mat_mul(list(self.gram_matrices), z)
        t = t + self.penalty_weight * z
        return t + self.correction_left @ (self.correction_right @ z)


def build_factor_workspace(model: TuckerModel, n: int, eps: float, lam: float,
                           caches: Sequence[FactorCache] | None = None,
                           ) -> FactorUpdateWorkspace:
    """Assemble the constrained-update preconditioner for factor ``n``.

    The penalty weight is ``(1 + 12/eps)`` times a power-iteration estimate
    of ``||[K; sqrt(lam) (G^T)^+] N||_2^2`` (times a 1.05 safety margin,
    since power iteration approaches the norm from below), and the inverse of
    the penalized normal matrix is decomposed by the Woodbury identity around
    ``(K^T K + w I)^+``.
    """
    if model.core.ndim < 2:
        raise InvalidInputError("factor updates need an order >= 2 model")
    if not 0.0 < eps < 1.0 / 3.0:
        raise InvalidInputError(f"eps must be in (0, 1/3), got {eps}")
    g_n = unfold(model.core, n)
    if not np.any(g_n):
        raise InvalidInputError("core unfolding is identically zero")
    gn_pinv = pseudo_inverse(g_n)
    gnt_pinv = gn_pinv.T
    others = _other_factors(model, n)
    if caches is not None:
        grams = [c.gram for k, c in enumerate(caches) if k != n]
    else:
        grams = [build_factor_cache(a).gram for a in others]
    gram_mats = tuple(g.matrix for g in grams)
    r_rest = g_n.shape[1]

    def apply_constrained_gram(v: np.ndarray) -> np.ndarray:
        # N (K^T K + lam G^+ (G^+)^T) N v, the square of the penalized block
        u = v - g_n.T @ (gnt_pinv @ v)
        t = kron_mat_mul(list(gram_mats), u)
        t = t + lam * (gn_pinv @ (gn_pinv.T @ u))
        return t - g_n.T @ (gnt_pinv @ t)

    norm_sq = _power_iteration(apply_constrained_gram, r_rest)
    w = (1.0 + 12.0 / eps) * norm_sq * PENALTY_SAFETY_MARGIN

    eig = reduce(np.kron, [g.eigenvalues for g in grams])
    base_diag = pseudo_reciprocal(eig + w)
    v_factors = tuple(g.v for g in grams)

    correction_right = lam * gnt_pinv - w * g_n
    # base_diag applied to the columns of G^+
    t = kron_mat_mul([v.T for v in v_factors], gn_pinv)
    p0_gpinv = kron_mat_mul(list(v_factors), base_diag[:, None] * t)
    core = np.eye(g_n.shape[0]) + correction_right @ p0_gpinv
    try:
        core_inv = np.linalg.solve(core, np.eye(g_n.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(
            "Woodbury core matrix is singular",
            diagnostics={"w": w, "mode": n}) from exc
    return FactorUpdateWorkspace(
        g_n=g_n, gn_pinv=gn_pinv, gnt_pinv=gnt_pinv, penalty_weight=w,
        v_factors=v_factors, base_diag=base_diag, correction_left=gn_pinv,
        correction_mid=core_inv, correction_right=correction_right,
        gram_matrices=gram_mats)


def _power_iteration(operator, dim: int, seed: int = 0) -> float:
    """Largest-eigenvalue lower bound for a PSD operator; 0 if it is zero.

    Runs at most ``POWER_ITERATION_MAX`` rounds.  Every Rayleigh quotient of
    a PSD operator lower-bounds the top eigenvalue, so when the 1e-6
    relative-change stop is not reached (nearly degenerate spectra) the best
    quotient seen is still a usable underestimate; after 100 rounds it is
    within a couple percent, which the caller's safety margin absorbs.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    estimate = 0.0
    best = 0.0
    for _ in range(POWER_ITERATION_MAX):
        u = operator(v)
        if not np.all(np.isfinite(u)):
            raise NumericalFailureError(
                "power iteration produced non-finite values",
                diagnostics={"estimate": estimate})
        norm = float(np.linalg.norm(u))
        if norm <= 1e-300:
            return 0.0
        new_estimate = float(v @ u)
        best = max(best, new_estimate)
        v = u / norm
        if abs(new_estimate - estimate) <= POWER_ITERATION_TOL * max(1e-30, abs(new_estimate)):
            break
        estimate = new_estimate
    return best


def fast_factor_matrix_update(model: TuckerModel, x, n: int,
                              config: RegressionConfig,
                              caches: Sequence[FactorCache] | None = None,
                              ) -> np.ndarray:
    """Sketched update of factor ``n``; each row is solved independently.

    Row ``i`` of the unfolding is fit by sampling
    ``ceil(alpha * 1680 R_rest ln(40 R_rest) ln(I_n/delta) / eps)`` rows of
    the leftover Kronecker product from the leverage-score product
    distribution, then running damped Richardson iteration on the penalized
    equality-constrained problem with the Woodbury preconditioner; the
    solution is projected back onto the constraint set and mapped through the
    core pseudoinverse.  When the sample count reaches the available row
    count, the exact per-row solve runs instead.
    """
    x = as_tensor(x)
    if x.shape != model.shape:
        raise InvalidInputError(f"tensor shape {x.shape} != model shape {model.shape}")
    if not 0 <= n < len(model.factors):
        raise InvalidInputError(f"mode {n} out of range")
    if not 0.0 < config.eps < 1.0 / 3.0:
        raise InvalidInputError(
            f"factor updates require eps in (0, 1/3), got {config.eps}")
    lam = model.lam
    others = _other_factors(model, n)
    i_n = model.factors[n].shape[0]
    r_rest = math.prod(a.shape[1] for a in others)
    i_rest = math.prod(a.shape[0] for a in others)
    s = max(1, math.ceil(config.effective_alpha * REGRESSION_SAMPLE_CONSTANT
                         * r_rest * math.log(40 * r_rest)
                         * math.log(i_n / config.delta) / config.eps))
    if s >= i_rest:
        return naive_factor_update(model, x, n)

    workspace = build_factor_workspace(model, n, config.eps, lam, caches=caches)
    if caches is not None:
        svds = [c.svd for k, c in enumerate(caches) if k != n]
    else:
        svds = [build_factor_cache(a).svd for a in others]
    sampler = build_product_sampler(
        [ridge_leverage_scores(svd, 0.0) for svd in svds])

    b = unfold(x, n)
    row_shape = tuple(a.shape[0] for a in others)
    w = workspace.penalty_weight
    damping = config.effective_damping
    seeds = np.random.SeedSequence(config.seed).spawn(i_n)
    new_factor = np.empty((i_n, model.core.shape[n]))
    shared_sketch = None
    if config.share_row_sketch:
        shared_sketch = sample_rows(sampler, s, seeds[0])
    for i in range(i_n):
        sketch = shared_sketch if shared_sketch is not None else \
            sample_rows(sampler, s, seeds[i])
        sdiag = sparse_diagonal_from_sketch(sketch, row_shape)
        b_at = b[i, sdiag.indices]
        rhs = sketched_kron_transpose_apply(others, sdiag, sdiag.values * b_at)

        def apply_normal(z: np.ndarray) -> np.ndarray:
            t = sketched_kron_transpose_apply(
                others, sdiag, sketched_kron_apply(others, sdiag, z))
            t = t + w * z
            t = t + lam * (workspace.gn_pinv @ (workspace.gnt_pinv @ z))
            t = t - w * (workspace.gn_pinv @ (workspace.g_n @ z))
            return t

        z, _ = richardson_solve(apply_normal, workspace.apply, rhs, damping,
                                config)
        z = workspace.project_feasible(z)
        new_factor[i, :] = workspace.gnt_pinv @ z
    return new_factor


@dataclass
class AlsReport:
    """Loss/time trace of one alternating-least-squares run."""

    step_labels: list[str] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    step_errors: list[float] = field(default_factory=list)
    step_seconds: list[float] = field(default_factory=list)
    sweep_losses: list[float] = field(default_factory=list)
    sweep_rres: list[float] = field(default_factory=list)
    sweep_seconds: list[float] = field(default_factory=list)
    rre: float = math.nan

    @property
    def mean_sweep_seconds(self) -> float:
        return float(np.mean(self.sweep_seconds)) if self.sweep_seconds else math.nan


def initial_model(x: np.ndarray, core_shape: Sequence[int], lam: float,
                  seed) -> TuckerModel:
    """Random orthonormal factors; the core is filled by the first exact solve."""
    rng = np.random.default_rng(seed)
    factors = []
    for i_n, r_n in zip(x.shape, core_shape):
        q, _ = np.linalg.qr(rng.standard_normal((i_n, r_n)))
        factors.append(q)
    core = np.zeros(tuple(core_shape))
    return TuckerModel(core=core, factors=factors, lam=lam)


def tucker_als(x, core_shape: Sequence[int], lam: float = 0.0,
               sweeps: int = 5, solver_mode: str = "exact",
               config: RegressionConfig | None = None,
               loss_change_tol: float | None = None,
               ) -> tuple[TuckerModel, AlsReport]:
    """Alternating least squares for the regularized Tucker objective.

    Factors are initialized to random orthonormal matrices (seeded from
    ``config.seed``) and the core is solved exactly once before any factor
    update.  Each sweep then updates factors for modes ``0..N-1`` followed by
    the core, recording the regularized loss after every block update.  In
    ``exact`` mode every block update is an exact minimizer, so the recorded
    losses are non-increasing (up to roundoff).

    Returns the fitted model and an :class:`AlsReport` whose ``rre`` is the
    final relative reconstruction error.
    """
    x = as_tensor(x)
    core_shape = tuple(int(r) for r in core_shape)
    if len(core_shape) != x.ndim:
        raise InvalidInputError(
            f"core shape {core_shape} does not match tensor order {x.ndim}")
    if any(r < 1 or r > i for r, i in zip(core_shape, x.shape)):
        raise InvalidInputError(
            f"core shape {core_shape} must be componentwise in [1, {x.shape}]")
    if sweeps < 1:
        raise InvalidInputError(f"sweeps must be >= 1, got {sweeps}")
    if solver_mode not in ("exact", "fast"):
        raise InvalidInputError(f"unknown solver mode {solver_mode!r}")
    config = (config or RegressionConfig()).with_lam(lam)

    model = initial_model(x, core_shape, lam, config.seed)
    caches = [build_factor_cache(a) for a in model.factors]
    report = AlsReport()
    x_norm_sq = float(np.sum(x**2))

    def record(label: str, seconds: float):
        err = float(np.sum((reconstruct(model) - x) ** 2))
        reg = float(np.sum(model.core**2))
        reg += sum(float(np.sum(a**2)) for a in model.factors)
        report.step_labels.append(label)
        report.step_losses.append(err + lam * reg)
        report.step_errors.append(err)
        report.step_seconds.append(seconds)

    t0 = time.perf_counter()
    model.core = core_update(model, x, mode="exact")
    record("init-core", time.perf_counter() - t0)

    seed_root = np.random.SeedSequence(config.seed)
    prev_sweep_loss = report.step_losses[-1]
    for sweep in range(sweeps):
        sweep_start = time.perf_counter()
        sweep_seeds = seed_root.spawn(x.ndim + 1)
        for n in range(x.ndim):
            t0 = time.perf_counter()
            if solver_mode == "exact":
                model.factors[n] = naive_factor_update(model, x, n)
            else:
                step_cfg = _reseed(config, sweep_seeds[n])
                model.factors[n] = fast_factor_matrix_update(
                    model, x, n, step_cfg, caches=caches)
            caches[n] = build_factor_cache(model.factors[n])
            record(f"sweep{sweep}-factor{n}", time.perf_counter() - t0)
        t0 = time.perf_counter()
        if solver_mode == "exact":
            model.core = core_update(model, x, mode="exact")
        else:
            step_cfg = _reseed(config, sweep_seeds[-1])
            model.core = core_update(model, x, mode="fast", config=step_cfg,
                                     caches=caches)
        record(f"sweep{sweep}-core", time.perf_counter() - t0)
        report.sweep_losses.append(report.step_losses[-1])
        report.sweep_rres.append(report.step_errors[-1] / x_norm_sq
                                 if x_norm_sq > 0 else 0.0)
        report.sweep_seconds.append(time.perf_counter() - sweep_start)
        loss = report.sweep_losses[-1]
        if (loss_change_tol is not None
                and abs(prev_sweep_loss - loss) <= loss_change_tol * max(1.0, abs(prev_sweep_loss))):
            break
        prev_sweep_loss = loss
    report.rre = relative_error(model, x)
    return model, report


def _reseed(config: RegressionConfig, seed_seq: np.random.SeedSequence) -> RegressionConfig:
    from dataclasses import replace
    return replace(config, seed=int(seed_seq.generate_state(1)[0]))
