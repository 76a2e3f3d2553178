"""Discrete degenerate quadratic problems.

A problem is the data of a symmetric positive semidefinite operator A
whose kernel is a known finite-dimensional space, an SPD Gram matrix M
for the ambient inner product, a Gram matrix for the energy-space norm,
and a load vector. This module owns the kernel basis handling, the
parallel/perpendicular projectors, the energy functionals, consistency
checks, and (de)serialization.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .linalg import SparseMatrix, cg_solve, sparse_add, spmv

__all__ = [
    "DEFAULT_TOLERANCES",
    "DiscreteProblem",
    "KernelBasis",
    "RankDeficientKernelError",
    "Tolerances",
    "check_consistency",
    "energy_value",
    "h_norm",
    "is_consistent",
    "l_norm",
    "load_problem",
    "make_consistent",
    "make_problem",
    "orthonormalize_kernel",
    "problem_diagnostics",
    "problem_from_json",
    "problem_to_json",
    "project_parallel",
    "project_perp",
    "regularized_value",
    "save_problem",
    "toy_problem",
]


class RankDeficientKernelError(Exception):
    """Supplied kernel columns are (numerically) linearly dependent."""


@dataclass(frozen=True)
class Tolerances:
    """Central tolerance configuration; all checks read from here.

    orthonormality      max |Z^T M Z - I| allowed for a kernel basis
    kernel_membership   max |A z| relative to max |A| for kernel columns
    rank                relative norm collapse treated as rank deficiency
    consistency         max |F . z| relative to ||F||_2 for consistent loads
    projector           slack for projector identities (idempotence etc.)
    """

    orthonormality: float = 1e-12
    kernel_membership: float = 1e-10
    rank: float = 1e-10
    consistency: float = 1e-10
    projector: float = 1e-12


DEFAULT_TOLERANCES = Tolerances()


def _readonly_matrix(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out is a:
        out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class KernelBasis:
    """Columns spanning the kernel, orthonormal in the M inner product."""

    matrix: np.ndarray  # shape (n, m)

    def __post_init__(self):
        mat = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        if mat.ndim != 2:
            raise ValueError("kernel basis must be a 2-d array")
        object.__setattr__(self, "matrix", _readonly_matrix(mat))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def m(self) -> int:
        return self.matrix.shape[1]

    @property
    def columns(self) -> list:
        return [self.matrix[:, j] for j in range(self.m)]


def orthonormalize_kernel(
    raw_columns,
    M: SparseMatrix,
    rank_tol: Optional[float] = None,
) -> KernelBasis:
    """M-orthonormalize raw kernel columns by modified Gram-Schmidt.

    One reorthogonalization pass is always applied. A column whose
    M-norm collapses below ``rank_tol`` times its original M-norm raises
    ``RankDeficientKernelError``.
    """
    if rank_tol is None:
        rank_tol = DEFAULT_TOLERANCES.rank
    if isinstance(raw_columns, np.ndarray) and raw_columns.ndim == 2:
        cols = np.array(raw_columns, dtype=np.float64)
    else:
        cols = np.column_stack([np.asarray(c, dtype=np.float64) for c in raw_columns])
    n, m = cols.shape
    if M.n_rows != n:
        raise ValueError("kernel columns do not match the Gram matrix size")

    Q = np.empty((n, m))
    for j in range(m):
        v = cols[:, j].copy()
        original = np.sqrt(max(float(v @ spmv(M, v)), 0.0))
        if original == 0.0:
            raise RankDeficientKernelError(f"kernel column {j} has zero M-norm")
        for _ in range(2):  # MGS plus one reorthogonalization pass
            for i in range(j):
                v -= float(Q[:, i] @ spmv(M, v)) * Q[:, i]
        norm = np.sqrt(max(float(v @ spmv(M, v)), 0.0))
        if norm < rank_tol * original:
            raise RankDeficientKernelError(
                f"kernel column {j} is numerically dependent on the previous ones"
            )
        Q[:, j] = v / norm
    return KernelBasis(Q)


@dataclass(frozen=True)
class DiscreteProblem:
    """Immutable bundle of operators, load, and kernel basis.

    ``H_gram`` induces the energy-space norm used for error reporting;
    by default it is A + M.
    """

    A: SparseMatrix
    M: SparseMatrix
    H_gram: SparseMatrix
    F: np.ndarray
    kernel: KernelBasis
    label: str = ""
    tolerances: Tolerances = DEFAULT_TOLERANCES

    def __post_init__(self):
        F = np.asarray(self.F, dtype=np.float64).ravel()
        object.__setattr__(self, "F", _readonly_matrix(F))
        n = self.A.n_rows
        for name in ("A", "M", "H_gram"):
            mat = getattr(self, name)
            if mat.n_rows != n or mat.n_cols != n:
                raise ValueError(f"{name} must be {n} x {n}")
        if self.F.shape != (n,):
            raise ValueError("load vector has wrong length")
        if self.kernel.n != n:
            raise ValueError("kernel basis has wrong length")

    @property
    def n(self) -> int:
        return self.A.n_rows


def make_problem(
    A: SparseMatrix,
    M: SparseMatrix,
    F,
    kernel_columns,
    H_gram: Optional[SparseMatrix] = None,
    label: str = "",
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> DiscreteProblem:
    """Assemble a problem from raw parts.

    Kernel columns are M-orthonormalized and checked against A: every
    column must be annihilated to ``tolerances.kernel_membership``
    relative to the largest entry of A.
    """
    kernel = orthonormalize_kernel(kernel_columns, M, rank_tol=tolerances.rank)
    scale = float(np.abs(A.values).max()) if A.nnz else 0.0
    for j, z in enumerate(kernel.columns):
        residual = float(np.abs(spmv(A, z)).max())
        if residual > tolerances.kernel_membership * max(scale, 1e-300):
            raise ValueError(
                f"kernel column {j} is not annihilated by A "
                f"(|A z| = {residual:.3e}, |A| = {scale:.3e})"
            )
    if H_gram is None:
        H_gram = sparse_add(A, M)
    return DiscreteProblem(A, M, H_gram, F, kernel, label=label, tolerances=tolerances)


def toy_problem(f=(1.0, -1.0)) -> DiscreteProblem:
    """Two-dimensional desk instance: A = [[1,-1],[-1,1]], M = I.

    The kernel is the constants; the default load is consistent and the
    minimizer over the complement is (1/2, -1/2).
    """
    A = SparseMatrix.from_dense([[1.0, -1.0], [-1.0, 1.0]], symmetric=True)
    M = SparseMatrix.identity(2)
    return make_problem(A, M, np.asarray(f, dtype=np.float64), [np.ones(2)], label="toy2x2")


# ---------------------------------------------------------------------------
# projectors and functionals


def project_parallel(problem: DiscreteProblem, u: np.ndarray) -> np.ndarray:
    """M-orthogonal projection of u onto the kernel."""
    Z = problem.kernel.matrix
    return Z @ (Z.T @ spmv(problem.M, np.asarray(u, dtype=np.float64)))


def project_perp(problem: DiscreteProblem, u: np.ndarray) -> np.ndarray:
    """M-orthogonal projection of u onto the complement of the kernel."""
    u = np.asarray(u, dtype=np.float64)
    return u - project_parallel(problem, u)


def energy_value(problem: DiscreteProblem, u: np.ndarray) -> float:
    """Quadratic objective 0.5 u.A u - F.u."""
    u = np.asarray(u, dtype=np.float64)
    return 0.5 * float(u @ spmv(problem.A, u)) - float(problem.F @ u)


def regularized_value(problem: DiscreteProblem, u: np.ndarray, eta: float) -> float:
    """Objective plus the mass-weighted Tikhonov term 0.5*eta*|u|_L^2."""
    if eta <= 0.0:
        raise ValueError("eta must be positive")
    u = np.asarray(u, dtype=np.float64)
    return energy_value(problem, u) + 0.5 * eta * float(u @ spmv(problem.M, u))


def h_norm(problem: DiscreteProblem, u: np.ndarray) -> float:
    """Energy-space norm induced by H_gram."""
    u = np.asarray(u, dtype=np.float64)
    return float(np.sqrt(max(float(u @ spmv(problem.H_gram, u)), 0.0)))


def l_norm(problem: DiscreteProblem, u: np.ndarray) -> float:
    """Ambient norm induced by M."""
    u = np.asarray(u, dtype=np.float64)
    return float(np.sqrt(max(float(u @ spmv(problem.M, u)), 0.0)))


def check_consistency(problem: DiscreteProblem) -> np.ndarray:
    """Pairings of the load with each kernel basis column (F . z_j)."""
    return problem.kernel.matrix.T @ problem.F


def is_consistent(problem: DiscreteProblem) -> bool:
    """True when the load annihilates the kernel to tolerance."""
    pairings = check_consistency(problem)
    scale = float(np.linalg.norm(problem.F))
    if scale == 0.0:
        return True
    return bool(np.abs(pairings).max() <= problem.tolerances.consistency * scale)


def make_consistent(problem: DiscreteProblem) -> DiscreteProblem:
    """Remove the kernel component of the load.

    Idempotent on consistent data; a second corrective pass keeps the
    residual pairings at rounding level.
    """
    pairings = check_consistency(problem)
    if not np.any(pairings):
        return problem
    Z = problem.kernel.matrix
    MZ = np.column_stack([spmv(problem.M, Z[:, j]) for j in range(problem.kernel.m)])
    F = problem.F - MZ @ pairings
    F = F - MZ @ (Z.T @ F)
    return dataclasses.replace(problem, F=F)


# ---------------------------------------------------------------------------
# diagnostics


def problem_diagnostics(problem: DiscreteProblem, iterations: int = 25, seed: int = 0) -> dict:
    """Structural and spectral health report.

    The coercivity/continuity numbers are extreme Rayleigh quotients of
    the energy form against the H_gram form over the kernel complement,
    estimated by a few (inverse) power steps. They are diagnostics, not
    certified bounds.
    """
    A, M, H = problem.A, problem.M, problem.H_gram
    Z = problem.kernel.matrix
    rng = np.random.default_rng(seed)

    sym = A._csr - A._csr.T
    a_symmetry = float(np.abs(sym.data).max()) if sym.nnz else 0.0
    scale = float(np.abs(A.values).max()) if A.nnz else 0.0
    kernel_residual = max(
        (float(np.abs(spmv(A, z)).max()) for z in problem.kernel.columns), default=0.0
    )
    gram = Z.T @ np.column_stack([spmv(M, Z[:, j]) for j in range(problem.kernel.m)])
    ortho_error = float(np.abs(gram - np.eye(problem.kernel.m)).max())

    # continuity: maximize u.A u / u.H u over the complement
    v = project_perp(problem, rng.standard_normal(problem.n))
    v /= max(h_norm(problem, v), 1e-300)
    for _ in range(iterations):
        w, _ = cg_solve(H, spmv(A, v), tol=1e-10)
        w = project_perp(problem, w)
        nw = h_norm(problem, w)
        if nw == 0.0:
            break
        v = w / nw
    continuity = float(v @ spmv(A, v)) / max(float(v @ spmv(H, v)), 1e-300)

    # coercivity: minimize the same quotient (inverse iteration on A,
    # restricted to the complement of the kernel)
    Q, _ = np.linalg.qr(Z)
    euclid_perp = lambda x: x - Q @ (Q.T @ x)  # noqa: E731
    v = project_perp(problem, rng.standard_normal(problem.n))
    v /= max(h_norm(problem, v), 1e-300)
    for _ in range(iterations):
        w, _ = cg_solve(A, spmv(H, v), tol=1e-10, projector=euclid_perp)
        w = project_perp(problem, w)
        nw = h_norm(problem, w)
        if nw == 0.0:
            break
        v = w / nw
    coercivity = float(v @ spmv(A, v)) / max(float(v @ spmv(H, v)), 1e-300)

    return {
        "n": problem.n,
        "kernel_dim": problem.kernel.m,
        "a_symmetry_error": a_symmetry,
        "a_scale": scale,
        "kernel_residual": kernel_residual,
        "kernel_orthonormality_error": ortho_error,
        "consistency_pairings": check_consistency(problem).tolist(),
        "coercivity_estimate": coercivity,
        "continuity_estimate": continuity,
    }


# ---------------------------------------------------------------------------
# serialization

_FORMAT = "degenergy-problem"
_VERSION = 1


def _matrix_payload(A: SparseMatrix) -> dict:
    row_ids = np.repeat(np.arange(A.n_rows, dtype=np.int64), np.diff(A.row_offsets))
    return {
        "n_rows": A.n_rows,
        "n_cols": A.n_cols,
        "symmetric": bool(A.symmetric),
        "triplets": [
            [int(i), int(j), float(v)]
            for i, j, v in zip(row_ids, A.col_indices, A.values)
        ],
    }


def _matrix_from_payload(payload: dict) -> SparseMatrix:
    trips = payload.get("triplets", [])
    rows = [t[0] for t in trips]
    cols = [t[1] for t in trips]
    vals = [t[2] for t in trips]
    return SparseMatrix.from_triplets(
        payload["n_rows"],
        payload["n_cols"],
        rows,
        cols,
        vals,
        symmetric=bool(payload.get("symmetric", False)),
    )


def problem_to_json(problem: DiscreteProblem) -> str:
    """Serialize to JSON with full double precision (bit-preserving)."""
    doc = {
        "format": _FORMAT,
        "version": _VERSION,
        "label": problem.label,
        "n": problem.n,
        "A": _matrix_payload(problem.A),
        "M": _matrix_payload(problem.M),
        "H_gram": _matrix_payload(problem.H_gram),
        "F": [float(v) for v in problem.F],
        "kernel": [[float(v) for v in col] for col in problem.kernel.columns],
        "tolerances": dataclasses.asdict(problem.tolerances),
    }
    return json.dumps(doc, indent=2)


def problem_from_json(text: str) -> DiscreteProblem:
    doc = json.loads(text)
    if doc.get("format") != _FORMAT:
        raise ValueError("not a problem file")
    if doc.get("version") != _VERSION:
        raise ValueError(f"unsupported problem file version {doc.get('version')!r}")
    kernel = KernelBasis(np.array(doc["kernel"], dtype=np.float64).T)
    tol = Tolerances(**doc.get("tolerances", {}))
    return DiscreteProblem(
        A=_matrix_from_payload(doc["A"]),
        M=_matrix_from_payload(doc["M"]),
        H_gram=_matrix_from_payload(doc["H_gram"]),
        F=np.array(doc["F"], dtype=np.float64),
        kernel=kernel,
        label=doc.get("label", ""),
        tolerances=tol,
    )


def save_problem(problem: DiscreteProblem, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(problem_to_json(problem))


def load_problem(path) -> DiscreteProblem:
    with open(path, "r", encoding="utf-8") as fh:
        return problem_from_json(fh.read())
