"""Self-contained oracle-equivalence checks behind ``kronsolve check``.

Each check compares a fast code path against an independent dense
computation on a fixed-seed instance and prints one pass/fail line.
"""

from __future__ import annotations

import tempfile
from functools import reduce
from pathlib import Path

import numpy as np


def run_checks() -> int:
    from . import kron, leverage, solvers, tensor, tensor_io, tucker

    rng = np.random.default_rng(20240901)
    failures = 0

    def check(name, ok, detail=""):
        nonlocal failures
        if ok:
            print(f"ok   {name}")
        else:
            failures += 1
            print(f"FAIL {name}{': ' + detail if detail else ''}")

    # vectorization vs explicit Kronecker expansion
    g = rng.standard_normal((2, 3, 2))
    facs = [rng.standard_normal((3, 2)), rng.standard_normal((4, 3)),
            rng.standard_normal((2, 2))]
    lhs = tensor.vectorize(tensor.multi_mode_product(g, facs))
    rhs = tensor.explicit_kron(facs) @ tensor.vectorize(g)
    check("vectorize/kron consistency", np.allclose(lhs, rhs, atol=1e-12))

    # implicit multiplies vs dense
    dense = reduce(np.kron, facs)
    b = rng.standard_normal((dense.shape[1], 3))
    check("kron_mat_mul", np.allclose(kron.kron_mat_mul(facs, b), dense @ b,
                                      atol=1e-10))
    sq = [rng.standard_normal((2, 2)), rng.standard_normal((3, 3))]
    c = rng.standard_normal(6)
    check("kron_vec_square",
          np.allclose(kron.kron_vec_square(sq, c), reduce(np.kron, sq) @ c,
                      atol=1e-10))

    # sketched applies vs dense
    rows = dense.shape[0]
    idx = np.sort(rng.choice(rows, size=5, replace=False)).astype(np.int64)
    vals = rng.standard_normal(5)
    sd = kron.SparseDiagonal(indices=idx, values=vals)
    cvec = rng.standard_normal(dense.shape[1])
    smat = np.zeros((rows, rows))
    smat[idx, idx] = vals
    check("sketched_kron_apply",
          np.allclose(kron.sketched_kron_apply(facs, sd, cvec),
                      (smat @ dense @ cvec)[idx], atol=1e-10))
    bv = rng.standard_normal(5)
    bfull = np.zeros(rows)
    bfull[idx] = bv
    check("sketched_kron_transpose_apply",
          np.allclose(kron.sketched_kron_transpose_apply(facs, sd, bv),
                      dense.T @ smat @ bfull, atol=1e-10))

    # exact solvers agree
    sf = [rng.standard_normal((8, 3)), rng.standard_normal((6, 2))]
    bb = rng.standard_normal(48)
    r1 = solvers.naive_normal_solve(sf, bb, 1e-3)
    r2 = solvers.kronmatmul_svd_solve(sf, bb, 1e-3)
    check("exact solver agreement",
          np.allclose(r1.solution, r2.solution, atol=1e-8))

    # leverage product law
    small = [rng.standard_normal((4, 2)), rng.standard_normal((3, 2))]
    per = [leverage.statistical_leverage_scores(a) for a in small]
    sampler = leverage.build_product_sampler(per)
    joint = np.outer(sampler.per_factor_probabilities[0],
                     sampler.per_factor_probabilities[1]).reshape(-1)
    full = leverage.statistical_leverage_scores(tensor.explicit_kron(small))
    check("leverage product law",
          np.allclose(joint, full.normalized(), atol=1e-9))

    # Richardson with the exact normal matrix converges in one step
    a = rng.standard_normal((8, 3))
    ata = a.T @ a
    inv = np.linalg.inv(ata)
    x, iters = solvers.richardson_solve(
        lambda v: ata @ v, lambda v: inv @ v, a.T @ bb[:8], 1.0,
        solvers.RegressionConfig(eps=0.25))
    xstar = np.linalg.lstsq(a, bb[:8], rcond=None)[0]
    check("richardson exact preconditioner",
          iters <= 1 and np.allclose(x, xstar, atol=1e-8))

    # Woodbury-corrected preconditioner vs dense pseudoinverse
    model = tucker.TuckerModel(
        core=rng.standard_normal((2, 3, 2)),
        factors=[rng.standard_normal((5, 2)), rng.standard_normal((6, 3)),
                 rng.standard_normal((4, 2))], lam=0.1)
    ws = tucker.build_factor_workspace(model, 0, eps=0.25, lam=0.1)
    others = [model.factors[1], model.factors[2]]
    kd = tensor.explicit_kron(others)
    gmat = tensor.unfold(model.core, 0)
    gp = np.linalg.pinv(gmat)
    nproj = np.eye(gmat.shape[1]) - gmat.T @ np.linalg.pinv(gmat.T)
    m = kd.T @ kd + 0.1 * gp @ gp.T + ws.penalty_weight * nproj
    z = rng.standard_normal(gmat.shape[1])
    check("woodbury preconditioner",
          np.allclose(ws.apply(z), np.linalg.pinv(m) @ z, atol=1e-8))

    # tensor file round trip
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "x.ktn"
        xt = rng.standard_normal((3, 4, 2))
        tensor_io.write_tensor(path, xt)
        back = tensor_io.read_tensor(path)
        check("tensor file roundtrip", np.array_equal(back, xt))

    if failures:
        print(f"{failures} check(s) failed")
        return 1
    print("all checks passed")
    return 0
