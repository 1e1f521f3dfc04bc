"""Fast multiplication with implicit Kronecker products.

The operator ``K = A1 kron ... kron AN`` is only ever represented by its
factor list.  ``kron_mat_mul`` peels the rightmost factor off recursively;
``kron_vec_square`` cycles the reshape-multiply-permute identity for square
factors; the ``sketched_*`` routines apply a row-sparsified ``K`` by
splitting the factors into two column-balanced groups and touching only the
nonzero rows.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .leverage import RowSketch
from .tensor import as_matrix

# Above this nonzero fraction the sparse two-group scheme loses to a plain
# dense multiply, so the sketched paths fall back to kron_mat_mul.
SPARSE_FALLBACK_FRACTION = 0.5

BALANCED_PARTITION_MAX_ORDER = 30


def check_factors(factors: Sequence[np.ndarray]) -> list[np.ndarray]:
    if len(factors) == 0:
        raise InvalidInputError("need at least one factor")
    return [as_matrix(a, f"factor {n}") for n, a in enumerate(factors)]


def kron_operator_shape(factors: Sequence[np.ndarray]) -> tuple[int, int]:
    """Implied (rows, cols) of the Kronecker product of ``factors``."""
    rows = math.prod(a.shape[0] for a in factors)
    cols = math.prod(a.shape[1] for a in factors)
    return rows, cols


def kron_mat_mul(factors: Sequence[np.ndarray], b) -> np.ndarray:
    """Compute ``(A1 kron ... kron AN) @ b`` without densifying the product.

    ``b`` may be a vector of length ``prod(cols)`` or a matrix with that many
    rows.  The rightmost factor is applied first and the remaining product is
    handled recursively, costing ``O(K * sum_n J_1..J_n I_n..I_N)`` overall.
    """
    factors = check_factors(factors)
    b = np.asarray(b, dtype=np.float64)
    squeeze = b.ndim == 1
    if squeeze:
        b = b[:, None]
    if b.ndim != 2:
        raise InvalidInputError("b must be a vector or a matrix")
    _, cols = kron_operator_shape(factors)
    if b.shape[0] != cols:
        raise InvalidInputError(
            f"b has {b.shape[0]} rows but the operator has {cols} columns")
    out = _kron_mat_mul_rec(factors, b)
    return out[:, 0] if squeeze else out


def _kron_mat_mul_rec(factors: list[np.ndarray], b: np.ndarray) -> np.ndarray:
    if len(factors) == 1:
        return factors[0] @ b
    tail = factors[-1]
    i_n, j_n = tail.shape
    q = b.shape[0] // j_n
    k = b.shape[1]
    # z[q, i, k] = sum_j tail[i, j] * b[(q, j), k]  -- extract rightmost factor
    z = np.tensordot(b.reshape(q, j_n, k), tail, axes=([1], [1]))  # (q, k, i)
    z = z.transpose(0, 2, 1).reshape(q, i_n * k)
    c = _kron_mat_mul_rec(factors[:-1], z)
    return c.reshape(c.shape[0] * i_n, k)


def kron_vec_square(factors: Sequence[np.ndarray], c) -> np.ndarray:
    """Multiply a Kronecker product of square factors by a vector.

    One factor is applied per round to the fastest-varying mode, then the
    flat vector is cyclically permuted; after N rounds the index order is
    back to natural.  Costs ``O(R * sum_n R_n)`` for ``R = prod R_n``.
    """
    factors = check_factors(factors)
    for n, a in enumerate(factors):
        if a.shape[0] != a.shape[1]:
            raise InvalidInputError(f"factor {n} is {a.shape}, expected square")
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    size = math.prod(a.shape[0] for a in factors)
    if c.size != size:
        raise InvalidInputError(f"vector length {c.size} != operator size {size}")
    v = c
    for a in reversed(factors):
        r_n = a.shape[0]
        # apply to the fastest mode, then rotate it to the front
        v = np.ascontiguousarray((v.reshape(-1, r_n) @ a.T).T).reshape(-1)
    return v


@dataclass(frozen=True)
class FactorPartition:
    """A split of factor positions minimizing the larger column product."""

    left: tuple[int, ...]
    right: tuple[int, ...]
    left_product: int
    right_product: int

    @property
    def objective(self) -> int:
        return max(self.left_product, self.right_product)


def balanced_partition(col_dims: Sequence[int]) -> FactorPartition:
    """Split positions of ``col_dims`` to minimize max(prod left, prod right).

    Exhaustive over all subsets (guarded); ties are broken by the smaller
    left product, then lexicographically by the left index tuple.
    """
    dims = [int(d) for d in col_dims]
    n = len(dims)
    if n == 0:
        raise InvalidInputError("need at least one column dimension")
    if n > BALANCED_PARTITION_MAX_ORDER:
        raise InvalidInputError(
            f"exhaustive partition search supports at most "
            f"{BALANCED_PARTITION_MAX_ORDER} factors, got {n}")
    if any(d < 1 for d in dims):
        raise InvalidInputError("column dimensions must be positive")
    best = None
    for size in range(n + 1):
        for subset in itertools.combinations(range(n), size):
            lp = math.prod(dims[i] for i in subset)
            rp = math.prod(dims) // lp
            key = (max(lp, rp), lp, subset)
            if best is None or key < best[0]:
                best = (key, subset, lp, rp)
    _, subset, lp, rp = best
    right = tuple(i for i in range(n) if i not in subset)
    return FactorPartition(left=subset, right=right, left_product=lp,
                           right_product=rp)


@dataclass(frozen=True)
class SparseDiagonal:
    """Sparse diagonal over the Kronecker rows: sorted unique flat indices."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        val = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if idx.size != val.size:
            raise InvalidInputError("indices and values must have equal length")
        if idx.size and np.any(np.diff(idx) <= 0):
            raise InvalidInputError("indices must be strictly increasing")
        if idx.size and idx[0] < 0:
            raise InvalidInputError("indices must be nonnegative")
        if not np.all(np.isfinite(val)):
            raise InvalidInputError("values must be finite")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @property
    def nnz(self) -> int:
        return self.indices.size


def sparse_diagonal_from_sketch(sketch: RowSketch, row_shape: Sequence[int]) -> SparseDiagonal:
    """Collapse a row sketch into the diagonal ``sqrt(S^T S)``.

    Repeated draws of the same row accumulate: the diagonal entry at row j is
    ``sqrt(count_j / (p_j s))``, so applying the diagonal twice reproduces
    ``S^T S`` exactly.
    """
    idx = sketch.indices
    if idx.ndim == 2:
        flat = np.ravel_multi_index(tuple(idx.T), tuple(row_shape))
    else:
        flat = idx
    order = np.argsort(flat, kind="stable")
    flat = flat[order]
    w2 = sketch.weights[order] ** 2
    unique, start = np.unique(flat, return_index=True)
    sums = np.add.reduceat(w2, start)
    return SparseDiagonal(indices=unique, values=np.sqrt(sums))


def kron_rows(factors: Sequence[np.ndarray], multi_indices: np.ndarray) -> np.ndarray:
    """Rows of the Kronecker product at the given multi-indices.

    ``multi_indices`` has shape (m, N); the result is (m, prod cols).  An
    empty factor list yields a single all-ones column.
    """
    multi_indices = np.atleast_2d(np.asarray(multi_indices, dtype=np.intp))
    m = multi_indices.shape[0]
    acc = np.ones((m, 1))
    for n, a in enumerate(factors):
        part = a[multi_indices[:, n], :]
        acc = (acc[:, :, None] * part[:, None, :]).reshape(m, -1)
    return acc


def sketch_rows_of_kron(factors: Sequence[np.ndarray], sketch: RowSketch) -> np.ndarray:
    """Materialize the sketched matrix ``S K``: one rescaled row per draw."""
    factors = check_factors(factors)
    rows, _ = kron_operator_shape(factors)
    idx = sketch.indices
    if idx.ndim == 1:
        shape = tuple(a.shape[0] for a in factors)
        if idx.size and (idx.min() < 0 or idx.max() >= rows):
            raise InvalidInputError("sketch index out of range")
        idx = np.stack(np.unravel_index(idx, shape), axis=1)
    else:
        for n, a in enumerate(factors):
            if idx[:, n].size and (idx[:, n].min() < 0 or idx[:, n].max() >= a.shape[0]):
                raise InvalidInputError(f"sketch index out of range in mode {n}")
    return sketch.weights[:, None] * kron_rows(factors, idx)


def _split_indices(flat: np.ndarray, row_shape: tuple[int, ...],
                   part: FactorPartition):
    """Flat row indices -> per-group flat indices and multi-indices."""
    multi = np.stack(np.unravel_index(flat, row_shape), axis=1)

    def group(positions):
        if len(positions) == 0:
            return (np.zeros(multi.shape[0], dtype=np.int64),
                    np.zeros((multi.shape[0], 0), dtype=np.intp))
        dims = tuple(row_shape[i] for i in positions)
        sub = multi[:, list(positions)]
        return np.ravel_multi_index(tuple(sub.T), dims), sub

    li, multi_left = group(part.left)
    ri, multi_right = group(part.right)
    return li, multi_left, ri, multi_right


def _permute_from_groups(v: np.ndarray, col_shape: tuple[int, ...],
                         part: FactorPartition) -> np.ndarray:
    """Reorder a (left-group, right-group) flat vector to natural order."""
    order = part.left + part.right
    inverse = np.argsort(np.asarray(order))
    grouped_shape = tuple(col_shape[i] for i in order)
    return v.reshape(grouped_shape).transpose(tuple(inverse)).reshape(-1)


def _permute_to_groups(v: np.ndarray, col_shape: tuple[int, ...],
                       part: FactorPartition) -> np.ndarray:
    order = part.left + part.right
    return v.reshape(col_shape).transpose(order).reshape(-1)


def sketched_kron_apply(factors: Sequence[np.ndarray], s_diag: SparseDiagonal,
                        c) -> np.ndarray:
    """Entries of ``S K c`` at the nonzero rows of the diagonal ``S``.

    Only the sketched rows of ``K c`` are formed: the factors are split by
    :func:`balanced_partition`, the right group acts on the matricized ``c``
    at the distinct right-group indices, and each output entry contracts one
    left-group row with one precomputed column.  Returns values aligned with
    ``s_diag.indices`` (already scaled by ``s_diag.values``).
    """
    factors = check_factors(factors)
    rows, cols = kron_operator_shape(factors)
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    if c.size != cols:
        raise InvalidInputError(f"vector length {c.size} != operator columns {cols}")
    if s_diag.nnz == 0:
        return np.zeros(0)
    if s_diag.indices[-1] >= rows:
        raise InvalidInputError("sparse diagonal index out of range")
    if s_diag.nnz > rows * SPARSE_FALLBACK_FRACTION:
        full = kron_mat_mul(factors, c)
        return s_diag.values * full[s_diag.indices]

    row_shape = tuple(a.shape[0] for a in factors)
    col_shape = tuple(a.shape[1] for a in factors)
    part = balanced_partition(col_shape)
    li, multi_left, ri, multi_right = _split_indices(s_diag.indices, row_shape, part)

    r_left = math.prod(col_shape[i] for i in part.left)
    c_grouped = _permute_to_groups(c, col_shape, part)
    c_mat = c_grouped.reshape(r_left, -1).T  # (right cols) x (left cols)

    uri, ri_pos = np.unique(ri, return_inverse=True)
    right_rows = kron_rows([factors[i] for i in part.right],
                           _first_occurrences(multi_right, ri, uri))
    y = right_rows @ c_mat  # (distinct right rows) x (left cols)

    uli, li_pos = np.unique(li, return_inverse=True)
    left_rows = kron_rows([factors[i] for i in part.left],
                          _first_occurrences(multi_left, li, uli))

    vals = np.einsum("tj,tj->t", y[ri_pos], left_rows[li_pos])
    return s_diag.values * vals


def _first_occurrences(multi: np.ndarray, flat: np.ndarray,
                       unique_flat: np.ndarray) -> np.ndarray:
    """Multi-index of the first occurrence of each unique flat index."""
    order = np.argsort(flat, kind="stable")
    sorted_flat = flat[order]
    first = order[np.searchsorted(sorted_flat, unique_flat)]
    return multi[first]


def sketched_kron_transpose_apply(factors: Sequence[np.ndarray],
                                  s_diag: SparseDiagonal, b_values) -> np.ndarray:
    """Compute ``K^T S b`` given only the entries of ``b`` at nonzero rows.

    ``S b`` is scattered into a sparse matricization over the balanced factor
    split, the right group's transpose hits its few nonzero columns, and one
    rectangular multiply against the occupied left-group rows finishes the
    contraction.  ``b_values[t]`` corresponds to ``s_diag.indices[t]``.
    """
    factors = check_factors(factors)
    rows, cols = kron_operator_shape(factors)
    b_values = np.asarray(b_values, dtype=np.float64).reshape(-1)
    if b_values.size != s_diag.nnz:
        raise InvalidInputError("b_values must align with the sparse diagonal")
    if s_diag.nnz == 0:
        return np.zeros(cols)
    if s_diag.indices[-1] >= rows:
        raise InvalidInputError("sparse diagonal index out of range")
    if s_diag.nnz > rows * SPARSE_FALLBACK_FRACTION:
        full = np.zeros(rows)
        full[s_diag.indices] = s_diag.values * b_values
        return kron_mat_mul([a.T for a in factors], full)

    row_shape = tuple(a.shape[0] for a in factors)
    col_shape = tuple(a.shape[1] for a in factors)
    part = balanced_partition(col_shape)
    li, multi_left, ri, multi_right = _split_indices(s_diag.indices, row_shape, part)
    scaled = s_diag.values * b_values

    r_right = math.prod(col_shape[i] for i in part.right)
    right_rows = kron_rows([factors[i] for i in part.right], multi_right)

    uli, li_pos = np.unique(li, return_inverse=True)
    left_rows = kron_rows([factors[i] for i in part.left],
                          _first_occurrences(multi_left, li, uli))

    # columns of (right kron)^T @ B_S at the occupied left-group indices
    w = np.zeros((uli.size, r_right))
    np.add.at(w, li_pos, scaled[:, None] * right_rows)

    m = w.T @ left_rows  # (right cols) x (left cols): the rectangular multiply
    grouped = m.T.reshape(-1)  # natural (left slow, right fast) flat order
    return _permute_from_groups(grouped, col_shape, part)
