"""Quadratic minimization with a known kernel, four solution routes.

The package assembles singular-but-consistent symmetric systems (pure
Neumann model problems, or anything supplied through the problem
container), solves them by projection, bordering, penalty, or spectral
perturbation, and quantifies how the perturbative route converges as
its strength goes to zero.
"""

from .linalg import (
    DENSE_CUTOFF,
    EigenEstimate,
    SingularSystemError,
    SolveDiagnostics,
    SparseMatrix,
    cg_solve,
    extremal_eigs,
    ldl_solve,
    matrix_market_text,
    pattern_union_nnz,
    sparse_add,
    spmv,
)
from .problem_core import (
    DEFAULT_TOLERANCES,
    DiscreteProblem,
    KernelBasis,
    RankDeficientKernelError,
    Tolerances,
    check_consistency,
    energy_value,
    h_norm,
    is_consistent,
    l_norm,
    load_problem,
    make_consistent,
    make_problem,
    orthonormalize_kernel,
    problem_diagnostics,
    problem_from_json,
    problem_to_json,
    project_parallel,
    project_perp,
    regularized_value,
    save_problem,
    toy_problem,
)
from .formulations import (
    ComparisonReport,
    ConditioningReport,
    ConsistencyError,
    ConvergenceFailure,
    Formulation,
    FormulationConfig,
    InconsistentLoadWarning,
    Solution,
    compare_formulations,
    conditioning_report,
    solve_penalty,
    solve_perturbative,
    solve_projected,
    solve_saddle,
)
from .fem import (
    ManufacturedCase,
    Mesh,
    assemble,
    build_interval_mesh,
    build_unit_square_mesh,
    case_cosine_1d,
    case_cosine_2d,
    error_norms,
    interpolate,
    write_mesh,
)
from .harness import (
    DEFAULT_ETAS,
    EtaRule,
    FittedRates,
    RateFit,
    SweepReport,
    SweepRow,
    coupled_eta,
    coupled_sweep,
    eta_sweep,
    fit_rate,
    fixed_eta,
    gamma_value_check,
    h_sweep,
)
from .figures import render_comparison_figure, render_sweep_figure

__version__ = "0.1.0"
