"""Minimal sparse linear algebra for the formulation layer.

Deliberately small surface: CSR storage with deterministic assembly,
conjugate gradients with an optional subspace projector (deflation by
projecting the residual, not by basis elimination), a pivoted LDL^T
solve for small indefinite bordered systems, and extremal eigenvalue
estimates for conditioning reports.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp

__all__ = [
    "DENSE_CUTOFF",
    "EigenEstimate",
    "SingularSystemError",
    "SolveDiagnostics",
    "SparseMatrix",
    "cg_solve",
    "extremal_eigs",
    "ldl_solve",
    "matrix_market_text",
    "pattern_union_nnz",
    "sparse_add",
    "spmv",
]

#: Largest system handled by the dense direct path (bordered solves).
DENSE_CUTOFF = 5000

LinearMap = Callable[[np.ndarray], np.ndarray]
Operator = Union["SparseMatrix", LinearMap]


class SingularSystemError(Exception):
    """A direct factorization met a numerically singular pivot."""


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=dtype)
    if out is a:
        out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SparseMatrix:
    """Compressed-row matrix with sorted, duplicate-free column indices.

    Instances are immutable (the backing arrays are read-only) and safe
    to share between threads.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        offsets = _frozen(self.row_offsets, np.int64)
        cols = _frozen(self.col_indices, np.int64)
        vals = _frozen(self.values, np.float64)
        object.__setattr__(self, "row_offsets", offsets)
        object.__setattr__(self, "col_indices", cols)
        object.__setattr__(self, "values", vals)

        if self.n_rows < 0 or self.n_cols < 0:
            raise ValueError("matrix dimensions must be nonnegative")
        if offsets.shape != (self.n_rows + 1,):
            raise ValueError("row_offsets must have length n_rows + 1")
        if offsets[0] != 0 or offsets[-1] != cols.size or np.any(np.diff(offsets) < 0):
            raise ValueError("row_offsets must increase from 0 to nnz")
        if cols.shape != vals.shape:
            raise ValueError("col_indices and values must have equal length")
        if cols.size and (cols.min() < 0 or cols.max() >= self.n_cols):
            raise ValueError("column index out of range")
        # strictly increasing columns within each row
        if cols.size > 1:
            d = np.diff(cols)
            interior = np.ones(cols.size - 1, dtype=bool)
            starts = offsets[1:-1]
            interior[starts[(starts > 0) & (starts < cols.size)] - 1] = False
            if np.any(d[interior] <= 0):
                raise ValueError("column indices must be sorted and unique per row")
        if self.symmetric:
            self._check_symmetry()

    def _check_symmetry(self):
        if self.n_rows != self.n_cols:
            raise ValueError("symmetric matrix must be square")
        diff = self._csr - self._csr.T
        if diff.nnz:
            scale = np.abs(self.values).max() if self.values.size else 0.0
            if np.abs(diff.data).max() > 1e-12 * max(scale, 1e-300):
                raise ValueError("matrix flagged symmetric is not symmetric")

    @cached_property
    def _csr(self) -> sp.csr_array:
        return sp.csr_array(
            (self.values, self.col_indices, self.row_offsets),
            shape=(self.n_rows, self.n_cols),
        )

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @classmethod
    def from_triplets(cls, n_rows, n_cols, rows, cols, values, symmetric=False):
        """Build from COO triplets, summing duplicates.

        Duplicates are accumulated after a stable (row, col) sort, so the
        reduction order per matrix entry is deterministic and mirrored
        entries of symmetric assemblies sum bitwise identically.
        """
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=np.float64).ravel()
        if not (rows.size == cols.size == values.size):
            raise ValueError("triplet arrays must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= n_rows:
                raise ValueError("row index out of range")
            order = np.lexsort((cols, rows))
            r, c, v = rows[order], cols[order], values[order]
            fresh = np.empty(r.size, dtype=bool)
            fresh[0] = True
            fresh[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
            starts = np.flatnonzero(fresh)
            summed = np.add.reduceat(v, starts)
            r, c = r[starts], c[starts]
        else:
            r = c = np.empty(0, dtype=np.int64)
            summed = np.empty(0, dtype=np.float64)
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=n_rows), out=offsets[1:])
        return cls(n_rows, n_cols, offsets, c, summed, symmetric=symmetric)

    @classmethod
    def from_scipy(cls, m, symmetric=False):
        m = sp.csr_array(m)
        m.sum_duplicates()
        m.sort_indices()
        return cls(
            m.shape[0],
            m.shape[1],
            m.indptr.copy(),
            m.indices.copy(),
            m.data.copy(),
            symmetric=symmetric,
        )

    @classmethod
    def from_dense(cls, a, symmetric=False):
        a = np.asarray(a, dtype=np.float64)
        rows, cols = np.nonzero(a)
        return cls.from_triplets(
            a.shape[0], a.shape[1], rows, cols, a[rows, cols], symmetric=symmetric
        )

    @classmethod
    def identity(cls, n):
        idx = np.arange(n, dtype=np.int64)
        return cls(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n), symmetric=True)

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()


def spmv(A: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product.

    Rows are reduced sequentially, so the result is deterministic for a
    fixed matrix regardless of call site.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.n_cols,):
        raise ValueError(f"operand has shape {x.shape}, expected ({A.n_cols},)")
    return A._csr @ x


def sparse_add(A: SparseMatrix, B: SparseMatrix, alpha=1.0, beta=1.0) -> SparseMatrix:
    """Return alpha*A + beta*B as a new matrix."""
    if (A.n_rows, A.n_cols) != (B.n_rows, B.n_cols):
        raise ValueError("shape mismatch")
    out = (alpha * A._csr + beta * B._csr).tocsr()
    return SparseMatrix.from_scipy(out, symmetric=A.symmetric and B.symmetric)


def pattern_union_nnz(A: SparseMatrix, B: SparseMatrix) -> int:
    """Number of entries in the union of the two sparsity patterns."""
    pa = sp.csr_array((np.ones(A.nnz), A.col_indices, A.row_offsets), shape=(A.n_rows, A.n_cols))
    pb = sp.csr_array((np.ones(B.nnz), B.col_indices, B.row_offsets), shape=(B.n_rows, B.n_cols))
    return int((pa + pb).nnz)


def matrix_market_text(A: SparseMatrix) -> str:
    """Matrix-market-style text dump (1-based triplets), for debugging."""
    row_ids = np.repeat(np.arange(A.n_rows, dtype=np.int64), np.diff(A.row_offsets))
    lines = [
        "%%MatrixMarket matrix coordinate real general",
        f"{A.n_rows} {A.n_cols} {A.nnz}",
    ]
    lines.extend(
        f"{i + 1} {j + 1} {v:.17g}"
        for i, j, v in zip(row_ids, A.col_indices, A.values)
    )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SolveDiagnostics:
    """Outcome of an iterative solve."""

    iterations: int
    relative_residual: float
    converged: bool
    condition_estimate: Optional[float] = None


def _as_operator(A: Operator, n: Optional[int]):
    if isinstance(A, SparseMatrix):
        if A.n_rows != A.n_cols:
            raise ValueError("operator must be square")
        if n is not None and A.n_rows != n:
            raise ValueError(f"operator size {A.n_rows} does not match vector size {n}")
        return (lambda x: spmv(A, x)), A.n_rows
    if callable(A):
        if n is None:
            raise ValueError("vector size required for a callable operator")
        return A, n
    raise TypeError("operator must be a SparseMatrix or a callable")


def cg_solve(
    A: Operator,
    b: np.ndarray,
    tol: float = 1e-12,
    max_iter: Optional[int] = None,
    projector: Optional[LinearMap] = None,
    callback: Optional[Callable[[np.ndarray], None]] = None,
):
    """Conjugate gradients for SPD operators, optionally deflated.

    When ``projector`` is given, the right-hand side and the residual are
    projected every iteration, so all iterates stay fixed under the
    projector; convergence is measured within the projected subspace.
    Non-convergence is reported through the diagnostics (best iterate is
    still returned); the caller decides severity.

    Convergence is declared on the residual recurrence and confirmed
    against the true residual with a slack factor of 10, since near the
    rounding floor the two can disagree by a small constant. The
    diagnostics always report the true relative residual.

    Returns ``(x, SolveDiagnostics)``.
    """
    b = np.asarray(b, dtype=np.float64)
    matvec, n = _as_operator(A, b.size)
    if b.shape != (n,):
        raise ValueError("right-hand side has wrong shape")
    if max_iter is None:
        max_iter = 20 * n
    if projector is not None:
        b = projector(b)
    b_norm = float(np.linalg.norm(b))
    x = np.zeros(n)
    if b_norm == 0.0:
        return x, SolveDiagnostics(0, 0.0, True)

    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    iterations = 0
    converged = False
    restarts = 0
    while iterations < max_iter:
        iterations += 1
        Ap = matvec(p)
        if projector is not None:
            Ap = projector(Ap)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise ValueError("operator is not positive definite on the search space")
        alpha = rs / pAp
        x += alpha * p
        r -= alpha * Ap
        if projector is not None:
            r = projector(r)
        if callback is not None:
            callback(x)
        rs_next = float(r @ r)
        if np.sqrt(rs_next) <= tol * b_norm:
            # confirm against the true residual; the recurrence can drift
            # over long runs. Near the rounding floor the true residual
            # may sit a small factor above tol, so allow bounded slack
            # instead of restarting forever.
            true_r = b - matvec(x)
            if projector is not None:
                true_r = projector(true_r)
            true_norm = float(np.linalg.norm(true_r))
            if true_norm <= 10.0 * tol * b_norm or restarts >= 2:
                converged = True
                break
            restarts += 1
            r = true_r
            p = r.copy()
            rs = float(r @ r)
            continue
        beta = rs_next / rs
        p = r + beta * p
        rs = rs_next

    true_r = b - matvec(x)
    if projector is not None:
        true_r = projector(true_r)
    rel = float(np.linalg.norm(true_r) / b_norm)
    return x, SolveDiagnostics(iterations, rel, converged and rel <= 10.0 * tol)


def _solve_block_diagonal(d: np.ndarray, y: np.ndarray, pivot_tol: float) -> np.ndarray:
    """Solve with the (1x1 / 2x2)-block diagonal factor of an LDL^T."""
    n = y.size
    z = np.empty_like(y)
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            blk = d[i : i + 2, i : i + 2]
            sv = np.linalg.svd(blk, compute_uv=False)
            if sv[-1] < pivot_tol:
                raise SingularSystemError(f"singular 2x2 pivot block at index {i}")
            z[i : i + 2] = np.linalg.solve(blk, y[i : i + 2])
            i += 2
        else:
            piv = d[i, i]
            if abs(piv) < pivot_tol:
                raise SingularSystemError(f"numerically singular pivot at index {i}")
            z[i] = y[i] / piv
            i += 1
    return z


def ldl_solve(A: np.ndarray, b: np.ndarray, dense_cutoff: int = DENSE_CUTOFF) -> np.ndarray:
    """Solve a dense symmetric (possibly indefinite) system.

    Uses an LDL^T factorization with symmetric pivoting, which is adequate
    for the bordered saddle systems this package produces. A pivot below
    1e-14 times the largest matrix entry raises ``SingularSystemError``.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    n = A.shape[0]
    if b.shape != (n,):
        raise ValueError("right-hand side has wrong shape")
    if n > dense_cutoff:
        raise ValueError(f"system size {n} exceeds the dense cutoff {dense_cutoff}")
    scale = float(np.abs(A).max()) if n else 0.0
    if scale == 0.0:
        raise SingularSystemError("zero matrix")
    if float(np.abs(A - A.T).max()) > 1e-12 * scale:
        raise ValueError("matrix must be symmetric")

    lu, d, perm = scipy.linalg.ldl(A, lower=True)
    pivot_tol = 1e-14 * scale
    L = lu[perm]
    y = scipy.linalg.solve_triangular(L, b[perm], lower=True, unit_diagonal=True)
    z = _solve_block_diagonal(d, y, pivot_tol)
    w = scipy.linalg.solve_triangular(L.T, z, lower=False, unit_diagonal=True)
    x = np.empty_like(w)
    x[perm] = w
    return x


@dataclass(frozen=True)
class EigenEstimate:
    """Extremal eigenvalue estimate (Rayleigh quotient) with convergence flag."""

    value: float
    iterations: int
    converged: bool

    def __float__(self) -> float:
        return self.value


def extremal_eigs(
    A: Operator,
    which: str,
    shift: Optional[float] = None,
    n: Optional[int] = None,
    tol: float = 1e-6,
    max_iter: int = 10000,
) -> EigenEstimate:
    """Estimate an extremal eigenvalue of a symmetric operator.

    ``which="largest"`` runs power iteration; ``which="smallest"`` runs
    inverse iteration with inner CG solves of ``A - shift*I`` (so it is
    meant for SPD operators; a negative shift regularizes nearly singular
    ones). Non-convergence is flagged on the returned estimate rather
    than raised.
    """
    matvec, n = _as_operator(A, n)
    if which not in ("largest", "smallest"):
        raise ValueError("which must be 'largest' or 'smallest'")
    rng = np.random.default_rng(20240301)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)

    if which == "largest":
        lam = float(v @ matvec(v))
        for k in range(1, max_iter + 1):
            w = matvec(v)
            norm_w = np.linalg.norm(w)
            if norm_w == 0.0:
                return EigenEstimate(0.0, k, True)
            v = w / norm_w
            lam_next = float(v @ matvec(v))
            done = abs(lam_next - lam) <= tol * max(abs(lam_next), 1e-300)
            lam = lam_next
            if done:
                return EigenEstimate(lam, k, True)
        return EigenEstimate(lam, max_iter, False)

    if shift:
        op = lambda x: matvec(x) - shift * x  # noqa: E731
    else:
        op = matvec
    lam = float(v @ matvec(v))
    for k in range(1, max_iter + 1):
        w, diag = cg_solve(op, v, tol=1e-10, max_iter=40 * n)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return EigenEstimate(lam, k, False)
        v = w / norm_w
        lam_next = float(v @ matvec(v))
        done = diag.converged and abs(lam_next - lam) <= tol * max(abs(lam_next), 1e-300)
        lam = lam_next
        if done:
            return EigenEstimate(lam, k, True)
    return EigenEstimate(lam, max_iter, False)
