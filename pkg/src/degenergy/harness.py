"""Sweep drivers: perturbation-strength studies and mesh refinement.

Each sweep produces a :class:`SweepReport` holding per-run rows, fitted
log-log rates, and metadata. CSV output is deterministic byte-for-byte;
JSON output additionally carries the metadata (including a timestamp,
so only the CSV is promised stable).
"""

from __future__ import annotations

import datetime
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .fem import ManufacturedCase, assemble, build_interval_mesh, build_unit_square_mesh, error_norms
from .formulations import ConvergenceFailure, FormulationConfig, solve_perturbative, solve_projected
from .linalg import cg_solve
from .problem_core import (
    DiscreteProblem,
    check_consistency,
    h_norm,
    is_consistent,
    l_norm,
    regularized_value,
)

__all__ = [
    "DEFAULT_ETAS",
    "EtaRule",
    "FittedRates",
    "RateFit",
    "SweepReport",
    "SweepRow",
    "coupled_eta",
    "coupled_sweep",
    "eta_sweep",
    "fit_rate",
    "fixed_eta",
    "gamma_value_check",
    "h_sweep",
]

CSV_HEADER = "h,eta,n_dof,h1_error,l2_error,value_gap,iterations,residual"

# errors below this multiple of tol * reference_norm are dominated by the
# solver tolerance and are excluded from rate fits
FLOOR_FACTOR = 100.0

# decade grid used when the caller does not supply one
DEFAULT_ETAS = tuple(10.0 ** (-k) for k in range(1, 9))


class RateFit(NamedTuple):
    """Least-squares line through (log x, log y); residual is the RMS of
    the log-space misfit."""

    slope: float
    intercept: float
    residual: float


def fit_rate(points: Sequence) -> RateFit:
    xs = np.array([float(p[0]) for p in points])
    ys = np.array([float(p[1]) for p in points])
    if xs.size < 2:
        raise ValueError("rate fit needs at least two points")
    if np.any(xs <= 0.0) or np.any(ys <= 0.0):
        raise ValueError("rate fit needs strictly positive coordinates")
    lx, ly = np.log(xs), np.log(ys)
    if np.unique(lx).size < 2:
        raise ValueError("rate fit needs at least two distinct abscissae")
    design = np.column_stack([lx, np.ones_like(lx)])
    coef, _, _, _ = np.linalg.lstsq(design, ly, rcond=None)
    misfit = design @ coef - ly
    rms = float(np.sqrt(np.mean(misfit**2)))
    return RateFit(float(coef[0]), float(coef[1]), rms)


@dataclass(frozen=True)
class EtaRule:
    """Perturbation strength as a function of mesh size: eta = c * h**k."""

    c: float
    k: float

    def __post_init__(self):
        if self.c <= 0.0:
            raise ValueError("eta rule needs c > 0")

    def eta_for(self, h: float) -> float:
        return self.c * h**self.k


def fixed_eta(eta: float) -> EtaRule:
    return EtaRule(c=eta, k=0.0)


def coupled_eta(c: float, k: float) -> EtaRule:
    return EtaRule(c=c, k=k)


@dataclass(frozen=True)
class SweepRow:
    h: Optional[float]
    eta: float
    n_dof: int
    h1_error: float
    l2_error: float
    value_gap: float
    iterations: int
    residual: float
    converged: bool


@dataclass(frozen=True)
class FittedRates:
    h1: Optional[RateFit]
    l2: Optional[RateFit]
    value_gap: Optional[RateFit]


def _rate_dict(fit: Optional[RateFit]) -> Optional[dict]:
    if fit is None:
        return None
    return {"slope": fit.slope, "intercept": fit.intercept, "residual": fit.residual}


@dataclass(frozen=True)
class SweepReport:
    rows: tuple
    fitted_rates: FittedRates
    metadata: dict

    def to_csv_text(self) -> str:
        lines = [CSV_HEADER]
        for r in self.rows:
            h_field = "NA" if r.h is None else f"{r.h:.17g}"
            lines.append(
                f"{h_field},{r.eta:.17g},{r.n_dof},{r.h1_error:.17g},"
                f"{r.l2_error:.17g},{r.value_gap:.17g},{r.iterations},"
                f"{r.residual:.17g}"
            )
        return "\n".join(lines) + "\n"

    def to_json_text(self) -> str:
        doc = {
            "metadata": self.metadata,
            "fitted_rates": {
                "h1": _rate_dict(self.fitted_rates.h1),
                "l2": _rate_dict(self.fitted_rates.l2),
                "value_gap": _rate_dict(self.fitted_rates.value_gap),
            },
            "rows": [
                {
                    "h": r.h,
                    "eta": r.eta,
                    "n_dof": r.n_dof,
                    "h1_error": r.h1_error,
                    "l2_error": r.l2_error,
                    "value_gap": r.value_gap,
                    "iterations": r.iterations,
                    "residual": r.residual,
                    "converged": r.converged,
                }
                for r in self.rows
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _timestamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _dual_surrogate(problem: DiscreteProblem) -> float:
    y, _ = cg_solve(problem.H_gram, problem.F, tol=1e-10)
    return float(np.sqrt(max(problem.F @ y, 0.0)))


def _fit_above_floor(pairs, floor: float) -> Optional[RateFit]:
    kept = [(x, y) for x, y in pairs if y > floor]
    if len(kept) < 2:
        return None
    try:
        return fit_rate(kept)
    except ValueError:
        return None


def _map_ordered(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _failed_row(h, eta, n_dof, exc: ConvergenceFailure) -> SweepRow:
    """A non-converged solve keeps its row, flagged and excluded from fits."""
    diag = exc.diagnostics
    nan = float("nan")
    return SweepRow(
        h=h,
        eta=eta,
        n_dof=n_dof,
        h1_error=nan,
        l2_error=nan,
        value_gap=nan,
        iterations=diag.iterations,
        residual=diag.relative_residual,
        converged=False,
    )


# ---------------------------------------------------------------------------
# sweeps


def eta_sweep(
    problem: DiscreteProblem,
    etas: Sequence[float],
    cfg: FormulationConfig = FormulationConfig(),
    jobs: int = 1,
) -> SweepReport:
    """Fix the discrete problem, sweep the perturbation strength.

    Rows report the discrete energy-norm and mass-norm distances between
    the perturbed solution and the exact minimizer (columns ``h1_error``
    and ``l2_error``), plus the regularized-vs-exact objective gap. Rows
    are ordered by decreasing eta; the ``h`` column is not applicable
    here and serializes as NA.
    """
    etas = sorted(set(float(e) for e in etas), reverse=True)
    if len(etas) < 3:
        raise ValueError("eta sweep needs at least three distinct values")
    if etas[-1] <= 0.0:
        raise ValueError("eta values must be positive")
    if etas[0] / etas[-1] < 100.0 * (1.0 - 1e-12):
        raise ValueError("eta sweep should span at least two decades")
    if not is_consistent(problem):
        worst = float(np.abs(check_consistency(problem)).max())
        raise ValueError(
            f"eta sweep requires a consistent load (kernel pairing {worst:.3e})"
        )

    reference = solve_projected(problem, cfg)
    ref_norm = h_norm(problem, reference.u)
    v0 = reference.value

    def run(eta: float) -> SweepRow:
        try:
            sol = solve_perturbative(problem, replace(cfg, eta=eta))
        except ConvergenceFailure as exc:
            return _failed_row(None, eta, problem.n, exc)
        diff = sol.u - reference.u
        return SweepRow(
            h=None,
            eta=eta,
            n_dof=problem.n,
            h1_error=h_norm(problem, diff),
            l2_error=l_norm(problem, diff),
            value_gap=regularized_value(problem, sol.u, eta) - v0,
            iterations=sol.iterations,
            residual=sol.residual,
            converged=True,
        )

    rows = tuple(_map_ordered(run, etas, jobs))
    floor = FLOOR_FACTOR * cfg.tol * ref_norm
    rates = FittedRates(
        h1=_fit_above_floor([(r.eta, r.h1_error) for r in rows], floor),
        l2=_fit_above_floor([(r.eta, r.l2_error) for r in rows], floor),
        value_gap=_fit_above_floor(
            [(r.eta, r.value_gap) for r in rows], FLOOR_FACTOR * cfg.tol * ref_norm**2
        ),
    )
    metadata = {
        "kind": "eta-sweep",
        "label": problem.label,
        "n_dof": problem.n,
        "reference_norm": ref_norm,
        "reference_value": v0,
        "ell_dual_surrogate": _dual_surrogate(problem),
        "tol": cfg.tol,
        "generated_at": _timestamp(),
    }
    return SweepReport(rows=rows, fitted_rates=rates, metadata=metadata)


def _build_mesh(case: ManufacturedCase, n: int, degree: int):
    if case.dim == 1:
        return build_interval_mesh(n, degree)
    return build_unit_square_mesh(n, degree)


def h_sweep(
    case: ManufacturedCase,
    ns: Sequence[int],
    degree: int,
    eta_rule: EtaRule,
    cfg: FormulationConfig = FormulationConfig(),
    jobs: int = 1,
) -> SweepReport:
    """Refine the mesh, solving perturbatively with eta = rule(h).

    Errors are measured against the manufactured solution in the full H1
    and L2 norms with the mean of the difference removed, since solutions
    of the pure-Neumann problem are only determined up to the constant
    mode. ``value_gap`` compares the regularized objective at the
    perturbed solution with the exact discrete minimum on the same mesh.
    """
    ns = sorted(set(int(n) for n in ns))
    if len(ns) < 3:
        raise ValueError("h sweep needs at least three mesh sizes")
    if ns[0] < 2:
        raise ValueError("mesh sizes must be at least 2")

    def run(n: int) -> SweepRow:
        mesh = _build_mesh(case, n, degree)
        problem = assemble(mesh, case)
        eta = eta_rule.eta_for(mesh.h)
        try:
            reference = solve_projected(problem, cfg)
            sol = solve_perturbative(problem, replace(cfg, eta=eta))
        except ConvergenceFailure as exc:
            return _failed_row(mesh.h, eta, problem.n, exc)
        h1, l2 = error_norms(mesh, sol.u, case, align_mean=True)
        gap = regularized_value(problem, sol.u, eta) - reference.value
        return SweepRow(
            h=mesh.h,
            eta=eta,
            n_dof=problem.n,
            h1_error=h1,
            l2_error=l2,
            value_gap=gap,
            iterations=sol.iterations,
            residual=sol.residual,
            converged=True,
        )

    rows = tuple(_map_ordered(run, ns, jobs))  # ns ascending = h descending

    # the scale of the exact solution, for the solver-floor filter
    finest = _build_mesh(case, ns[-1], degree)
    exact_h1, _ = error_norms(finest, np.zeros(finest.n_nodes), case)
    floor = FLOOR_FACTOR * cfg.tol * exact_h1
    rates = FittedRates(
        h1=_fit_above_floor([(r.h, r.h1_error) for r in rows], floor),
        l2=_fit_above_floor([(r.h, r.l2_error) for r in rows], floor),
        value_gap=_fit_above_floor(
            [(r.h, r.value_gap) for r in rows], FLOOR_FACTOR * cfg.tol * exact_h1**2
        ),
    )
    metadata = {
        "kind": "h-sweep",
        "case": case.name,
        "degree": degree,
        "eta_rule": {"c": eta_rule.c, "k": eta_rule.k},
        "reference_norm": exact_h1,
        "tol": cfg.tol,
        "generated_at": _timestamp(),
    }
    return SweepReport(rows=rows, fitted_rates=rates, metadata=metadata)


def coupled_sweep(
    case: ManufacturedCase,
    ns: Sequence[int],
    degree: int,
    c: float,
    cfg: FormulationConfig = FormulationConfig(),
    jobs: int = 1,
) -> SweepReport:
    """h sweep with eta tied linearly to the mesh size (eta = c * h).

    Adds a ``value_gap_decreasing`` flag to the metadata: under this
    coupling the objective gap should shrink monotonically with h.
    """
    report = h_sweep(case, ns, degree, coupled_eta(c, 1.0), cfg, jobs)
    gaps = [r.value_gap for r in report.rows]
    decreasing = all(b < a for a, b in zip(gaps, gaps[1:]))
    metadata = dict(report.metadata)
    metadata["kind"] = "coupled-sweep"
    metadata["value_gap_decreasing"] = bool(decreasing)
    return SweepReport(rows=report.rows, fitted_rates=report.fitted_rates, metadata=metadata)


def gamma_value_check(
    problem: DiscreteProblem,
    etas: Sequence[float],
    cfg: FormulationConfig = FormulationConfig(),
) -> list:
    """Objective gaps V_eta(u_eta) - V(u0) for each eta, largest first.

    Each gap is nonnegative and bounded by eta/2 times the squared mass
    norm of the minimizer, so the list should decay linearly in eta.
    """
    etas = sorted(set(float(e) for e in etas), reverse=True)
    if any(e <= 0.0 for e in etas):
        raise ValueError("eta values must be positive")
    reference = solve_projected(problem, cfg)
    v0 = reference.value
    out = []
    for eta in etas:
        sol = solve_perturbative(problem, replace(cfg, eta=eta))
        out.append((eta, regularized_value(problem, sol.u, eta) - v0))
    return out
