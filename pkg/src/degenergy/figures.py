"""Figure rendering for sweep and comparison reports.

Everything here draws to files through the Agg backend; nothing opens a
window, so the functions are safe to call from batch jobs and tests.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["render_comparison_figure", "render_sweep_figure"]


def _swept_values(report):
    """x axis of a sweep figure: h when present, eta otherwise."""
    if all(r.h is not None for r in report.rows):
        return np.array([r.h for r in report.rows]), "h"
    return np.array([r.eta for r in report.rows]), "eta"


def render_sweep_figure(report, path) -> None:
    """Log-log error and objective-gap decay with fitted-rate guides."""
    x, x_name = _swept_values(report)
    fig, (ax_err, ax_gap) = plt.subplots(1, 2, figsize=(9.0, 3.6))

    series = [
        ("h1_error", np.array([r.h1_error for r in report.rows]), report.fitted_rates.h1, "o-"),
        ("l2_error", np.array([r.l2_error for r in report.rows]), report.fitted_rates.l2, "s-"),
    ]
    for name, ys, fit, style in series:
        label = name if fit is None else f"{name} (rate {fit.slope:.2f})"
        ax_err.loglog(x, ys, style, markersize=4, label=label)
        if fit is not None:
            guide = np.exp(fit.intercept) * x**fit.slope
            ax_err.loglog(x, guide, "k--", linewidth=0.8, alpha=0.5)
    ax_err.set_xlabel(x_name)
    ax_err.set_ylabel("error")
    ax_err.legend(fontsize=8)
    ax_err.grid(True, which="both", alpha=0.3)

    gaps = np.array([r.value_gap for r in report.rows])
    positive = gaps > 0.0
    if positive.any():
        fit = report.fitted_rates.value_gap
        label = "value gap" if fit is None else f"value gap (rate {fit.slope:.2f})"
        ax_gap.loglog(x[positive], gaps[positive], "d-", markersize=4, label=label)
        if fit is not None:
            guide = np.exp(fit.intercept) * x**fit.slope
            ax_gap.loglog(x, guide, "k--", linewidth=0.8, alpha=0.5)
        ax_gap.legend(fontsize=8)
    else:
        ax_gap.text(0.5, 0.5, "gap at solver floor", ha="center", va="center",
                    transform=ax_gap.transAxes)
    ax_gap.set_xlabel(x_name)
    ax_gap.set_ylabel("objective gap")
    ax_gap.grid(True, which="both", alpha=0.3)

    kind = report.metadata.get("kind", "sweep")
    label = report.metadata.get("label") or report.metadata.get("case", "")
    fig.suptitle(f"{kind} {label}".strip(), fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_comparison_figure(report, path) -> None:
    """Bar panels for the four-formulation comparison."""
    names = [str(r.formulation) for r in report.rows]
    xs = np.arange(len(names))
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.4))

    errs = np.array([max(r.h_error_vs_projected, 0.0) for r in report.rows])
    # the projected row is identically zero; plot it at the axis floor
    floor = max(errs[errs > 0.0].min() * 1e-3, 1e-300) if (errs > 0.0).any() else 1e-16
    axes[0].bar(xs, np.maximum(errs, floor), color="#4878a8")
    axes[0].set_yscale("log")
    axes[0].set_title("energy-norm difference\nvs projected", fontsize=9)

    axes[1].bar(xs, [r.iterations for r in report.rows], color="#6aa84f")
    axes[1].set_title("iterations", fontsize=9)

    conds = np.array([r.condition_estimate for r in report.rows])
    finite = np.isfinite(conds)
    axes[2].bar(xs[finite], conds[finite], color="#b45f06")
    axes[2].set_yscale("log")
    axes[2].set_title("condition estimate", fontsize=9)

    for ax in axes:
        ax.set_xticks(xs)
        ax.set_xticklabels(names, rotation=20, fontsize=8)
        ax.grid(True, axis="y", alpha=0.3)

    fig.suptitle(
        f"{report.label}  (eta={report.eta:g}, eps={report.eps:g})", fontsize=10
    )
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
