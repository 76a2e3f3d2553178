"""Four interchangeable routes to the minimizer over the kernel complement.

* projected: deflated CG on the complement (reference solution)
* saddle: bordered KKT system solved densely by LDL^T
* penalty: CG on A plus a rank-m penalty, applied matrix-free
* perturbative: CG on the sparsity-preserving shifted operator A + eta*M
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .linalg import (
    DENSE_CUTOFF,
    SolveDiagnostics,
    cg_solve,
    extremal_eigs,
    ldl_solve,
    sparse_add,
    spmv,
)
from .problem_core import (
    DiscreteProblem,
    check_consistency,
    energy_value,
    h_norm,
    is_consistent,
    project_perp,
)

__all__ = [
    "ComparisonReport",
    "ConditioningReport",
    "ConsistencyError",
    "ConvergenceFailure",
    "Formulation",
    "FormulationConfig",
    "FormulationRow",
    "InconsistentLoadWarning",
    "Solution",
    "compare_formulations",
    "conditioning_report",
    "solve_penalty",
    "solve_perturbative",
    "solve_projected",
    "solve_saddle",
]


class Formulation(str, enum.Enum):
    PROJECTED = "projected"
    SADDLE = "saddle"
    PENALTY = "penalty"
    PERTURBATIVE = "perturbative"

    def __str__(self) -> str:  # keep CSV output free of enum reprs
        return self.value


class ConsistencyError(Exception):
    """Load has a kernel component beyond tolerance."""


class InconsistentLoadWarning(UserWarning):
    """Perturbative solve proceeding on an inconsistent load."""


class ConvergenceFailure(Exception):
    """Iterative solve failed to reach tolerance; diagnostics attached."""

    def __init__(self, message: str, diagnostics: SolveDiagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class FormulationConfig:
    """Solver settings shared by all formulations.

    ``max_iter=None`` means 20 times the system size. ``eta`` is the
    perturbation strength, ``eps`` the penalty strength; each solver
    validates the parameter it actually uses.
    """

    tol: float = 1e-12
    max_iter: Optional[int] = None
    eta: Optional[float] = None
    eps: Optional[float] = None
    reject_inconsistent: bool = True


@dataclass(frozen=True)
class Solution:
    """Solver outcome: coefficients plus method bookkeeping.

    ``value`` is the unregularized objective at ``u``; ``multiplier``
    holds the kernel coordinates of the saddle multiplier when the
    bordered route produced the solution.
    """

    u: np.ndarray
    formulation: Formulation
    eta_or_eps: float
    iterations: int
    residual: float
    value: float
    multiplier: Optional[np.ndarray] = None


def _guard_consistency(problem: DiscreteProblem, cfg: FormulationConfig, name: str):
    if not cfg.reject_inconsistent:
        return
    if not is_consistent(problem):
        pairings = check_consistency(problem)
        worst = int(np.abs(pairings).argmax())
        raise ConsistencyError(
            f"{name} requires a consistent load: kernel component {worst} pairs to "
            f"{pairings[worst]:.6e} (tolerance {problem.tolerances.consistency:.1e} "
            f"relative to |F| = {np.linalg.norm(problem.F):.6e}); "
            "remove it explicitly with make_consistent if that is intended"
        )


def _euclid_kernel_projector(problem: DiscreteProblem):
    # CG needs the complement that A itself leaves invariant, which is the
    # Euclidean orthogonal complement of the kernel; the returned iterate
    # is mapped back to the M-orthogonal representative afterwards.
    Q, _ = np.linalg.qr(problem.kernel.matrix)
    return lambda x: x - Q @ (Q.T @ x)


def solve_projected(problem: DiscreteProblem, cfg: FormulationConfig = FormulationConfig()) -> Solution:
    """Deflated CG on the kernel complement; minimal-M-norm representative."""
    _guard_consistency(problem, cfg, "projected formulation")
    projector = _euclid_kernel_projector(problem)
    x, diag = cg_solve(
        problem.A, problem.F, tol=cfg.tol, max_iter=cfg.max_iter, projector=projector
    )
    if not diag.converged:
        raise ConvergenceFailure(
            f"projected CG stalled at relative residual {diag.relative_residual:.3e} "
            f"after {diag.iterations} iterations",
            diag,
        )
    u = project_perp(problem, x)
    return Solution(
        u=u,
        formulation=Formulation.PROJECTED,
        eta_or_eps=0.0,
        iterations=diag.iterations,
        residual=diag.relative_residual,
        value=energy_value(problem, u),
    )


def _bordered_system(problem: DiscreteProblem):
    n, m = problem.n, problem.kernel.m
    Z = problem.kernel.matrix
    MZ = np.column_stack([spmv(problem.M, Z[:, j]) for j in range(m)])
    K = np.zeros((n + m, n + m))
    K[:n, :n] = problem.A.toarray()
    K[:n, n:] = MZ
    K[n:, :n] = MZ.T
    return K, MZ


def solve_saddle(problem: DiscreteProblem, cfg: FormulationConfig = FormulationConfig()) -> Solution:
    """Bordered KKT system; the multiplier coordinates come back with u.

    For consistent loads the multiplier vanishes (to rounding), which is
    itself a useful diagnostic of the data.
    """
    _guard_consistency(problem, cfg, "saddle formulation")
    n, m = problem.n, problem.kernel.m
    K, _ = _bordered_system(problem)
    rhs = np.concatenate([problem.F, np.zeros(m)])
    sol = ldl_solve(K, rhs)
    u, c = sol[:n], sol[n:]
    residual_vec = K @ sol - rhs
    scale = max(float(np.linalg.norm(rhs)), 1e-300)
    return Solution(
        u=u,
        formulation=Formulation.SADDLE,
        eta_or_eps=0.0,
        iterations=0,
        residual=float(np.linalg.norm(residual_vec)) / scale,
        value=energy_value(problem, u),
        multiplier=c,
    )


def solve_penalty(problem: DiscreteProblem, cfg: FormulationConfig) -> Solution:
    """CG on A + (1/eps) (MZ)(MZ)^T with the rank-m term applied matrix-free.

    The solution is eps-independent for consistent loads; shrinking eps
    only degrades conditioning, and a CG failure here is reported as data
    through the attached diagnostics.
    """
    if cfg.eps is None or cfg.eps <= 0.0:
        raise ValueError("penalty formulation needs eps > 0")
    _guard_consistency(problem, cfg, "penalty formulation")
    Z = problem.kernel.matrix
    MZ = np.column_stack([spmv(problem.M, Z[:, j]) for j in range(problem.kernel.m)])
    inv_eps = 1.0 / cfg.eps

    def operator(x):
        return spmv(problem.A, x) + inv_eps * (MZ @ (MZ.T @ x))

    x, diag = cg_solve(operator, problem.F, tol=cfg.tol, max_iter=cfg.max_iter)
    if not diag.converged:
        raise ConvergenceFailure(
            f"penalty CG (eps = {cfg.eps:.1e}) stalled at relative residual "
            f"{diag.relative_residual:.3e} after {diag.iterations} iterations; "
            "the penalty term dominates the spectrum at this strength",
            diag,
        )
    return Solution(
        u=x,
        formulation=Formulation.PENALTY,
        eta_or_eps=cfg.eps,
        iterations=diag.iterations,
        residual=diag.relative_residual,
        value=energy_value(problem, x),
    )


def solve_perturbative(problem: DiscreteProblem, cfg: FormulationConfig) -> Solution:
    """Plain CG on the shifted operator A + eta*M.

    The shifted operator is SPD for any eta > 0 and keeps the union
    sparsity pattern of A and M, so no projector and no bordering are
    involved. An inconsistent load does not stop the solve (the system
    stays SPD) but is flagged with a warning because the approximation
    guarantees assume consistency.
    """
    if cfg.eta is None or cfg.eta <= 0.0:
        raise ValueError("perturbative formulation needs eta > 0")
    if not is_consistent(problem):
        warnings.warn(
            "perturbative solve on an inconsistent load: the computed solution "
            "acquires a kernel component of order |F.z| / eta",
            InconsistentLoadWarning,
            stacklevel=2,
        )
    shifted = sparse_add(problem.A, problem.M, 1.0, cfg.eta)
    x, diag = cg_solve(shifted, problem.F, tol=cfg.tol, max_iter=cfg.max_iter)
    if not diag.converged:
        raise ConvergenceFailure(
            f"perturbative CG (eta = {cfg.eta:.1e}) stalled at relative residual "
            f"{diag.relative_residual:.3e} after {diag.iterations} iterations",
            diag,
        )
    return Solution(
        u=x,
        formulation=Formulation.PERTURBATIVE,
        eta_or_eps=cfg.eta,
        iterations=diag.iterations,
        residual=diag.relative_residual,
        value=energy_value(problem, x),
    )


# ---------------------------------------------------------------------------
# conditioning and comparison reports


@dataclass(frozen=True)
class SystemConditioning:
    formulation: Formulation
    n: int
    nnz: int
    lambda_max: float
    lambda_min: float

    @property
    def condition(self) -> float:
        if self.lambda_min == 0.0:
            return float("inf")
        return abs(self.lambda_max) / abs(self.lambda_min)


@dataclass(frozen=True)
class ConditioningReport:
    systems: tuple
    eta: float
    eps: float
    label: str

    def by_name(self, name) -> SystemConditioning:
        for s in self.systems:
            if s.formulation == Formulation(name):
                return s
        raise KeyError(name)

    def to_csv_text(self) -> str:
        lines = ["formulation,n,nnz,lambda_max,lambda_min,condition_estimate"]
        for s in self.systems:
            lines.append(
                f"{s.formulation},{s.n},{s.nnz},{s.lambda_max:.17g},"
                f"{s.lambda_min:.17g},{s.condition:.17g}"
            )
        return "\n".join(lines) + "\n"


def _penalty_pattern_nnz(problem: DiscreteProblem, MZ: np.ndarray) -> int:
    # union of pattern(A) with the (active x active) block of the rank-m
    # term, counted without materializing the block
    active = np.abs(MZ).max(axis=1) > 0.0
    n_active = int(active.sum())
    A = problem.A
    overlap = 0
    for i in np.flatnonzero(active):
        cols = A.col_indices[A.row_offsets[i] : A.row_offsets[i + 1]]
        overlap += int(active[cols].sum())
    return A.nnz - overlap + n_active * n_active


def conditioning_report(
    problem: DiscreteProblem,
    eta: float,
    eps: float,
    dense_cutoff: int = DENSE_CUTOFF,
) -> ConditioningReport:
    """Extremal eigenvalues and fill of each formulation's system matrix.

    Systems that are formed densely anyway (the bordered matrix) or whose
    pattern is dense (the penalty matrix) are measured with a direct
    symmetric eigensolver when small enough; the sparse systems use the
    iterative estimators. The projected row reports the effective
    condition of A on the kernel complement, since the full-space
    smallest eigenvalue is zero by construction.
    """
    if eta <= 0.0 or eps <= 0.0:
        raise ValueError("eta and eps must be positive")
    n, m = problem.n, problem.kernel.m
    Z = problem.kernel.matrix
    MZ = np.column_stack([spmv(problem.M, Z[:, j]) for j in range(m)])
    shifted = sparse_add(problem.A, problem.M, 1.0, eta)
    saddle_nnz = problem.A.nnz + 2 * int(np.count_nonzero(MZ))
    penalty_nnz = _penalty_pattern_nnz(problem, MZ)

    dense_ok = n + m <= dense_cutoff
    if dense_ok:
        A_dense = problem.A.toarray()
        eig_A = np.linalg.eigvalsh(A_dense)
        K = np.zeros((n + m, n + m))
        K[:n, :n] = A_dense
        K[:n, n:] = MZ
        K[n:, :n] = MZ.T
        eig_saddle = np.linalg.eigvalsh(K)
        eig_pen = np.linalg.eigvalsh(A_dense + (1.0 / eps) * (MZ @ MZ.T))
        eig_shift = np.linalg.eigvalsh(shifted.toarray())
        systems = (
            SystemConditioning(
                Formulation.PROJECTED, n, problem.A.nnz,
                float(eig_A[-1]), float(eig_A[m]),
            ),
            SystemConditioning(
                Formulation.SADDLE, n + m, saddle_nnz,
                float(np.abs(eig_saddle).max()), float(np.abs(eig_saddle).min()),
            ),
            SystemConditioning(
                Formulation.PENALTY, n, penalty_nnz,
                float(eig_pen[-1]), float(eig_pen[0]),
            ),
            SystemConditioning(
                Formulation.PERTURBATIVE, n, shifted.nnz,
                float(eig_shift[-1]), float(eig_shift[0]),
            ),
        )
        return ConditioningReport(systems, eta, eps, problem.label)

    # iterative estimates for the sparse systems only; the dense-pattern
    # systems are too large for either path at this size
    lam_max_A = extremal_eigs(problem.A, "largest")
    lam_max_shift = extremal_eigs(shifted, "largest")
    lam_min_shift = extremal_eigs(shifted, "smallest", shift=-eta)
    projector = _euclid_kernel_projector(problem)
    # effective smallest of A: inverse iteration kept off the kernel
    deflated = lambda x: spmv(problem.A, x)  # noqa: E731
    v = projector(np.random.default_rng(20240301).standard_normal(n))
    v /= np.linalg.norm(v)
    lam_eff = float(v @ deflated(v))
    for _ in range(200):
        w, _ = cg_solve(problem.A, v, tol=1e-10, projector=projector)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
        lam_next = float(v @ deflated(v))
        if abs(lam_next - lam_eff) <= 1e-6 * abs(lam_next):
            lam_eff = lam_next
            break
        lam_eff = lam_next
    systems = (
        SystemConditioning(Formulation.PROJECTED, n, problem.A.nnz, lam_max_A.value, lam_eff),
        SystemConditioning(Formulation.SADDLE, n + m, saddle_nnz, float("nan"), float("nan")),
        SystemConditioning(Formulation.PENALTY, n, penalty_nnz, float("nan"), float("nan")),
        SystemConditioning(
            Formulation.PERTURBATIVE, n, shifted.nnz, lam_max_shift.value, lam_min_shift.value
        ),
    )
    return ConditioningReport(systems, eta, eps, problem.label)


@dataclass(frozen=True)
class FormulationRow:
    formulation: Formulation
    n: int
    nnz: int
    iterations: int
    residual: float
    h_error_vs_projected: float
    condition_estimate: float


@dataclass(frozen=True)
class ComparisonReport:
    """Side-by-side run of all four formulations on one problem."""

    rows: tuple
    eta: float
    eps: float
    n_dof: int
    kernel_dim: int
    reference_norm: float
    max_pairwise_rel_diff: float
    perturbative_rel_diff: float
    perturbative_error_constant: float
    ell_dual_surrogate: float
    equivalent: bool
    label: str

    def to_csv_text(self) -> str:
        lines = ["formulation,n,nnz,iterations,residual,h_error_vs_projected,condition_estimate"]
        for r in self.rows:
            lines.append(
                f"{r.formulation},{r.n},{r.nnz},{r.iterations},{r.residual:.17g},"
                f"{r.h_error_vs_projected:.17g},{r.condition_estimate:.17g}"
            )
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "label": self.label,
            "eta": self.eta,
            "eps": self.eps,
            "n_dof": self.n_dof,
            "kernel_dim": self.kernel_dim,
            "reference_norm": self.reference_norm,
            "max_pairwise_rel_diff": self.max_pairwise_rel_diff,
            "perturbative_rel_diff": self.perturbative_rel_diff,
            "perturbative_error_constant": self.perturbative_error_constant,
            "ell_dual_surrogate": self.ell_dual_surrogate,
            "equivalent": self.equivalent,
            "rows": [
                {
                    "formulation": str(r.formulation),
                    "n": r.n,
                    "nnz": r.nnz,
                    "iterations": r.iterations,
                    "residual": r.residual,
                    "h_error_vs_projected": r.h_error_vs_projected,
                    "condition_estimate": r.condition_estimate,
                }
                for r in self.rows
            ],
        }


def compare_formulations(
    problem: DiscreteProblem,
    eta: float,
    eps: float,
    cfg: FormulationConfig = FormulationConfig(),
    equivalence_tol: float = 1e-8,
) -> ComparisonReport:
    """Run all four formulations and cross-measure their answers.

    The projected solution is the reference. The three exact routes
    (projected, saddle, penalty) must agree to ``equivalence_tol``
    relative to the reference energy norm; the perturbative difference is
    reported together with its ratio to eta, which estimates the
    first-order error constant.
    """
    _guard_consistency(problem, cfg, "formulation comparison")
    proj = solve_projected(problem, cfg)
    sad = solve_saddle(problem, cfg)
    pen = solve_penalty(problem, replace(cfg, eps=eps))
    pert = solve_perturbative(problem, replace(cfg, eta=eta))

    ref = max(h_norm(problem, proj.u), 1e-300)
    exact = [proj.u, sad.u, pen.u]
    max_pair = max(
        h_norm(problem, exact[i] - exact[j])
        for i in range(len(exact))
        for j in range(i + 1, len(exact))
    )
    pert_diff = h_norm(problem, pert.u - proj.u)

    # discrete surrogate for the dual norm of the load, |F|_{H^-1}
    y, _ = cg_solve(problem.H_gram, problem.F, tol=1e-10)
    ell_dual = float(np.sqrt(max(problem.F @ y, 0.0)))

    cond = conditioning_report(problem, eta, eps)
    solutions = {
        Formulation.PROJECTED: proj,
        Formulation.SADDLE: sad,
        Formulation.PENALTY: pen,
        Formulation.PERTURBATIVE: pert,
    }
    errors = {
        Formulation.PROJECTED: 0.0,
        Formulation.SADDLE: h_norm(problem, sad.u - proj.u),
        Formulation.PENALTY: h_norm(problem, pen.u - proj.u),
        Formulation.PERTURBATIVE: pert_diff,
    }
    rows = tuple(
        FormulationRow(
            formulation=f,
            n=cond.by_name(f).n,
            nnz=cond.by_name(f).nnz,
            iterations=solutions[f].iterations,
            residual=solutions[f].residual,
            h_error_vs_projected=errors[f],
            condition_estimate=cond.by_name(f).condition,
        )
        for f in (
            Formulation.PROJECTED,
            Formulation.SADDLE,
            Formulation.PENALTY,
            Formulation.PERTURBATIVE,
        )
    )
    return ComparisonReport(
        rows=rows,
        eta=eta,
        eps=eps,
        n_dof=problem.n,
        kernel_dim=problem.kernel.m,
        reference_norm=ref,
        max_pairwise_rel_diff=max_pair / ref,
        perturbative_rel_diff=pert_diff / ref,
        perturbative_error_constant=pert_diff / eta,
        ell_dual_surrogate=ell_dual,
        equivalent=bool(max_pair / ref <= equivalence_tol),
        label=problem.label,
    )
