"""Command-line front end.

Subcommands: solve, compare, sweep-eta, sweep-h, sweep-coupled,
condition. Report-producing commands write CSV or JSON and, when an
output path is given, render a PNG figure next to it.

Exit codes: 0 success, 2 usage (argparse), 3 bad case or problem file,
4 solver non-convergence, 5 inconsistent load, 6 output I/O failure.
The default solver tolerance can be overridden with the DEGENERGY_TOL
environment variable.
"""

from __future__ import annotations

import argparse
import os
import pathlib
import sys

import numpy as np

from .fem import assemble, build_interval_mesh, build_unit_square_mesh, case_cosine_1d, case_cosine_2d
from .figures import render_comparison_figure, render_sweep_figure
from .formulations import (
    ConsistencyError,
    ConvergenceFailure,
    Formulation,
    FormulationConfig,
    compare_formulations,
    conditioning_report,
    solve_penalty,
    solve_perturbative,
    solve_projected,
    solve_saddle,
)
from .harness import DEFAULT_ETAS, coupled_sweep, eta_sweep, fixed_eta, coupled_eta, h_sweep
from .problem_core import load_problem, toy_problem

__all__ = ["main"]

EXIT_OK = 0
EXIT_DATA = 3
EXIT_SOLVER = 4
EXIT_INCONSISTENT = 5
EXIT_IO = 6

CASES = ("cosine1d", "cosine2d", "toy2x2")


class _DataError(Exception):
    pass


class _OutputError(Exception):
    pass


def _default_tol() -> float:
    raw = os.environ.get("DEGENERGY_TOL", "")
    if not raw:
        return 1e-12
    try:
        return float(raw)
    except ValueError:
        print(f"warning: ignoring malformed DEGENERGY_TOL={raw!r}", file=sys.stderr)
        return 1e-12


def _add_case_args(sub, with_mesh=True):
    group = sub.add_mutually_exclusive_group()
    group.add_argument("--case", choices=CASES, default=None,
                       help="built-in case (default cosine1d)")
    group.add_argument("--from-file", metavar="PATH", default=None,
                       help="load a serialized problem instead of a built-in case")
    if with_mesh:
        sub.add_argument("--n", type=int, default=32,
                         help="elements per side for the built-in meshes (default 32)")
        sub.add_argument("--degree", type=int, choices=(1, 2), default=1,
                         help="element degree (default 1; 2 is 1D only)")


def _add_output_args(sub):
    sub.add_argument("--output", metavar="PATH", default=None,
                     help="write the report here (stdout if omitted)")
    sub.add_argument("--format", choices=("csv", "json"), default="csv")
    sub.add_argument("--no-figures", action="store_true",
                     help="skip the PNG rendered next to --output")


def _load_case(args):
    """Resolve --case/--from-file into (problem or None, mesh, case)."""
    if args.from_file is not None:
        try:
            problem = load_problem(args.from_file)
        except FileNotFoundError as exc:
            raise _DataError(f"problem file not found: {args.from_file}") from exc
        except (ValueError, KeyError, TypeError) as exc:
            raise _DataError(f"malformed problem file {args.from_file}: {exc}") from exc
        return problem, None, None
    name = args.case or "cosine1d"
    if name == "toy2x2":
        return toy_problem(), None, None
    n = getattr(args, "n", 32)
    degree = getattr(args, "degree", 1)
    try:
        if name == "cosine1d":
            mesh = build_interval_mesh(n, degree)
            case = case_cosine_1d()
        else:
            mesh = build_unit_square_mesh(n, degree)
            case = case_cosine_2d()
        problem = assemble(mesh, case)
    except ValueError as exc:
        raise _DataError(str(exc)) from exc
    return problem, mesh, case


def _fem_case(args):
    """Resolve a sweep case; mesh construction happens inside the sweep."""
    name = args.case or "cosine1d"
    if name == "toy2x2":
        raise _DataError("mesh sweeps need a PDE case, not toy2x2")
    return case_cosine_1d() if name == "cosine1d" else case_cosine_2d()


def _write_text(path, text) -> None:
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(text)
    except OSError as exc:
        raise _OutputError(f"cannot write {path}: {exc}") from exc


def _emit_report(args, csv_text, json_text, render) -> None:
    text = csv_text if args.format == "csv" else json_text
    if args.output is None:
        sys.stdout.write(text)
        return
    _write_text(args.output, text)
    print(f"wrote {args.output}")
    if not args.no_figures:
        fig_path = pathlib.Path(args.output).with_suffix(".png")
        try:
            render(fig_path)
        except OSError as exc:
            raise _OutputError(f"cannot write {fig_path}: {exc}") from exc
        print(f"wrote {fig_path}")


def _summary(args, line: str) -> None:
    # keep stdout parseable when the report itself goes there
    stream = sys.stderr if args.output is None else sys.stdout
    print(line, file=stream)


def _rates_summary(report) -> str:
    parts = []
    for name, fit in (("h1", report.fitted_rates.h1), ("l2", report.fitted_rates.l2),
                      ("value", report.fitted_rates.value_gap)):
        if fit is not None:
            parts.append(f"{name}_rate={fit.slope:.3f}")
    return "fitted rates: " + (", ".join(parts) if parts else "none (all below floor)")


def _parse_float_list(raw, flag):
    try:
        values = [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError as exc:
        raise _DataError(f"{flag} expects comma-separated numbers, got {raw!r}") from exc
    if not values:
        raise _DataError(f"{flag} received no values")
    return values


def _parse_int_list(raw, flag):
    try:
        values = [int(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError as exc:
        raise _DataError(f"{flag} expects comma-separated integers, got {raw!r}") from exc
    if not values:
        raise _DataError(f"{flag} received no values")
    return values


def _parse_couple(raw):
    """--couple 'k=2' or 'k=2,c=0.5' -> (c, k)."""
    c, k = 1.0, None
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        key, _, val = part.partition("=")
        try:
            num = float(val)
        except ValueError as exc:
            raise _DataError(f"--couple has a malformed entry {part!r}") from exc
        if key == "k":
            k = num
        elif key == "c":
            c = num
        else:
            raise _DataError(f"--couple only understands k= and c=, got {key!r}")
    if k is None:
        raise _DataError("--couple needs at least k=...")
    return c, k


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_solve(args) -> int:
    problem, _, _ = _load_case(args)
    cfg = FormulationConfig(tol=args.tol, eta=args.eta, eps=args.eps)
    form = Formulation(args.formulation)
    if form == Formulation.PROJECTED:
        sol = solve_projected(problem, cfg)
    elif form == Formulation.SADDLE:
        sol = solve_saddle(problem, cfg)
    elif form == Formulation.PENALTY:
        if cfg.eps is None:
            raise _DataError("penalty formulation needs --eps")
        sol = solve_penalty(problem, cfg)
    else:
        if cfg.eta is None:
            raise _DataError("perturbative formulation needs --eta")
        sol = solve_perturbative(problem, cfg)

    print(f"case: {problem.label or 'from-file'}")
    print(f"formulation: {sol.formulation}  n={problem.n}")
    print(f"iterations: {sol.iterations}  residual: {sol.residual:.3e}")
    print(f"objective value: {sol.value:.12g}")
    if sol.multiplier is not None:
        print(f"multiplier norm: {np.linalg.norm(sol.multiplier):.3e}")
    if problem.n <= 12:
        body = ", ".join(f"{v:.6g}" for v in sol.u)
        print(f"u = ({body})")
    else:
        print(f"|u|_inf = {np.abs(sol.u).max():.6g}")
    if args.output is not None:
        if args.format == "csv":
            lines = ["index,u"] + [f"{i},{v:.17g}" for i, v in enumerate(sol.u)]
            _write_text(args.output, "\n".join(lines) + "\n")
        else:
            import json

            doc = {
                "formulation": str(sol.formulation),
                "eta_or_eps": sol.eta_or_eps,
                "iterations": sol.iterations,
                "residual": sol.residual,
                "value": sol.value,
                "u": [float(v) for v in sol.u],
            }
            _write_text(args.output, json.dumps(doc, indent=2) + "\n")
        print(f"wrote {args.output}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    problem, _, _ = _load_case(args)
    cfg = FormulationConfig(tol=args.tol)
    report = compare_formulations(problem, eta=args.eta, eps=args.eps, cfg=cfg)
    import json

    _emit_report(
        args,
        report.to_csv_text(),
        json.dumps(report.to_json_dict(), indent=2) + "\n",
        lambda p: render_comparison_figure(report, p),
    )
    verdict = "agree" if report.equivalent else "DISAGREE"
    _summary(args, f"exact formulations {verdict}: max pairwise relative difference "
                   f"{report.max_pairwise_rel_diff:.3e}; perturbative offset "
                   f"{report.perturbative_rel_diff:.3e}")
    return EXIT_OK


def _cmd_sweep_eta(args) -> int:
    problem, _, _ = _load_case(args)
    etas = list(DEFAULT_ETAS) if args.etas is None else _parse_float_list(args.etas, "--etas")
    cfg = FormulationConfig(tol=args.tol)
    try:
        report = eta_sweep(problem, etas, cfg, jobs=args.jobs)
    except ValueError as exc:
        raise _DataError(str(exc)) from exc
    _emit_report(args, report.to_csv_text(), report.to_json_text(),
                 lambda p: render_sweep_figure(report, p))
    _summary(args, _rates_summary(report))
    return EXIT_OK


def _cmd_sweep_h(args) -> int:
    case = _fem_case(args)
    ns = _parse_int_list(args.ns, "--ns")
    if args.couple is not None:
        c, k = _parse_couple(args.couple)
        rule = coupled_eta(c, k)
    else:
        rule = fixed_eta(args.eta)
    cfg = FormulationConfig(tol=args.tol)
    try:
        report = h_sweep(case, ns, args.degree, rule, cfg, jobs=args.jobs)
    except ValueError as exc:
        raise _DataError(str(exc)) from exc
    _emit_report(args, report.to_csv_text(), report.to_json_text(),
                 lambda p: render_sweep_figure(report, p))
    _summary(args, _rates_summary(report))
    return EXIT_OK


def _cmd_sweep_coupled(args) -> int:
    case = _fem_case(args)
    ns = _parse_int_list(args.ns, "--ns")
    cfg = FormulationConfig(tol=args.tol)
    try:
        report = coupled_sweep(case, ns, args.degree, args.c, cfg, jobs=args.jobs)
    except ValueError as exc:
        raise _DataError(str(exc)) from exc
    _emit_report(args, report.to_csv_text(), report.to_json_text(),
                 lambda p: render_sweep_figure(report, p))
    trend = "decreasing" if report.metadata.get("value_gap_decreasing") else "NOT decreasing"
    _summary(args, f"{_rates_summary(report)}; value gap {trend} under the coupling")
    return EXIT_OK


def _cmd_condition(args) -> int:
    problem, _, _ = _load_case(args)
    try:
        report = conditioning_report(problem, eta=args.eta, eps=args.eps)
    except ValueError as exc:
        raise _DataError(str(exc)) from exc
    text = report.to_csv_text()
    if args.output is None:
        sys.stdout.write(text)
    else:
        _write_text(args.output, text)
        print(f"wrote {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="degenergy",
        description="Kernel-degenerate quadratic minimization via projection, "
        "bordering, penalty, or spectral perturbation.",
    )
    parser.add_argument("--tol", type=float, default=_default_tol(),
                        help="solver tolerance (default 1e-12 or $DEGENERGY_TOL)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one case with one formulation")
    _add_case_args(p)
    p.add_argument("--formulation", choices=[str(f) for f in Formulation],
                   default="projected")
    p.add_argument("--eta", type=float, default=None, help="perturbation strength")
    p.add_argument("--eps", type=float, default=None, help="penalty strength")
    p.add_argument("--output", metavar="PATH", default=None,
                   help="write the solution vector here")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("compare", help="run all four formulations side by side")
    _add_case_args(p)
    p.add_argument("--eta", type=float, default=1e-4)
    p.add_argument("--eps", type=float, default=1e-6)
    _add_output_args(p)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("sweep-eta", help="sweep the perturbation strength")
    _add_case_args(p)
    p.add_argument("--etas", default=None,
                   help="comma-separated eta values (default: decades 1e-1..1e-8)")
    p.add_argument("--jobs", type=int, default=1)
    _add_output_args(p)
    p.set_defaults(func=_cmd_sweep_eta)

    p = sub.add_parser("sweep-h", help="mesh refinement study")
    p.add_argument("--case", choices=CASES, default="cosine1d")
    p.add_argument("--ns", required=True, help="comma-separated element counts")
    p.add_argument("--degree", type=int, choices=(1, 2), default=1)
    p.add_argument("--eta", type=float, default=1e-8,
                   help="fixed perturbation strength (ignored with --couple)")
    p.add_argument("--couple", metavar="RULE", default=None,
                   help="tie eta to the mesh: 'k=2' or 'k=2,c=0.5' for eta=c*h^k")
    p.add_argument("--jobs", type=int, default=1)
    _add_output_args(p)
    p.set_defaults(func=_cmd_sweep_h)

    p = sub.add_parser("sweep-coupled", help="refinement with eta proportional to h")
    p.add_argument("--case", choices=CASES, default="cosine1d")
    p.add_argument("--ns", required=True, help="comma-separated element counts")
    p.add_argument("--degree", type=int, choices=(1, 2), default=1)
    p.add_argument("--c", type=float, default=1.0, help="eta = c * h")
    p.add_argument("--jobs", type=int, default=1)
    _add_output_args(p)
    p.set_defaults(func=_cmd_sweep_coupled)

    p = sub.add_parser("condition", help="extremal eigenvalues per formulation")
    _add_case_args(p)
    p.add_argument("--eta", type=float, default=1e-4)
    p.add_argument("--eps", type=float, default=1e-8)
    p.add_argument("--output", metavar="PATH", default=None)
    p.set_defaults(func=_cmd_condition)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConsistencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCONSISTENT
    except ConvergenceFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except _OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
