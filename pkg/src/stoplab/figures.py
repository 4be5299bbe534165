"""Figure rendering for report paths (opt-in via the CLI --plot flag).

Each renderer takes the already-computed result objects and writes one PNG
next to the delimited output; nothing here feeds back into the numbers.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_sweep(result, fit, theory, path) -> None:
    """Boundary- and value-gap scaling panels with fits and theory lines."""
    hs = np.array([r.h for r in result.rows])
    bgap = np.array([r.boundary_gap for r in result.rows])
    vgap = np.array([-r.rel_value_gap for r in result.rows])
    hh = np.geomspace(hs.min() * 0.8, hs.max() * 1.25, 200)

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.loglog(hs, bgap, "o", color="tab:blue", label="measured")
    ax1.loglog(hh, fit.c_boundary * np.sqrt(hh) + fit.boundary_correction * hh,
               "-", color="tab:blue", alpha=0.6,
               label=f"fit {fit.c_boundary:.4f}√h + {fit.boundary_correction:.3f}h")
    ax1.loglog(hh, theory.c_boundary * np.sqrt(hh), "--", color="k", alpha=0.7,
               label=f"theory {theory.c_boundary:.4f}√h")
    ax1.set_xlabel("h")
    ax1.set_ylabel("x* − x*_h")
    ax1.set_title("boundary gap")
    ax1.legend(fontsize=8)

    ax2.loglog(hs, vgap, "s", color="tab:red", label="measured")
    ax2.loglog(hh, fit.c_value * hh + fit.value_correction * hh ** 1.5,
               "-", color="tab:red", alpha=0.6,
               label=f"fit {fit.c_value:.4f}h + {fit.value_correction:.3f}h^1.5")
    ax2.loglog(hh, theory.c_value * hh, "--", color="k", alpha=0.7,
               label=f"theory {theory.c_value:.4f}h")
    ax2.set_xlabel("h")
    ax2.set_ylabel("−(V_h − V)/V at x_ref")
    ax2.set_title(f"value gap at x_ref = {result.x_ref:g}")
    ax2.legend(fontsize=8)

    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_constants(estimate, path) -> None:
    """Per-offset moment curves with the integrated constants overlaid."""
    c = estimate.curves
    fig, ax = plt.subplots(figsize=(6.5, 4))
    if c is not None:
        ax.errorbar(c.u, c.h_hat, yerr=3 * c.h_se, fmt="o-", ms=3, lw=1,
                    color="tab:blue", label="second moment H(u)")
        ax.errorbar(c.u, c.m_hat, yerr=3 * c.m_se, fmt="s-", ms=3, lw=1,
                    color="tab:red", label="first moment M(u)")
    ax.axhline(estimate.theta, color="tab:blue", ls="--", alpha=0.7,
               label=f"Θ = {estimate.theta:.4f} ± {estimate.theta_se:.4f}")
    ax.axhline(estimate.gamma, color="tab:red", ls="--", alpha=0.7,
               label=f"Γ = {estimate.gamma:.4f} ± {estimate.gamma_se:.4f}")
    ax.set_xlabel("offset u")
    ax.set_ylabel("moment")
    ax.set_title(f"ladder-walk constants ({estimate.u_mode}, n = {estimate.n_paths:,})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_uniformity(report, path) -> None:
    """Cell-frequency histogram of the hitting time's intra-cell position."""
    m = report.substeps
    freq = report.cell_counts / report.n_hits * m
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.bar((np.arange(m) + 0.5) / m, freq, width=1.0 / m, color="tab:blue",
           alpha=0.7, edgecolor="white")
    ax.axhline(1.0, color="k", ls="--", alpha=0.7, label="uniform")
    ax.set_xlabel("position inside the h-cell")
    ax.set_ylabel("relative frequency")
    ax.set_title(
        f"fractional-part uniformity: KS = {report.ks_distance:.4f} "
        f"({report.n_hits:,} hits)"
    )
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_continuous(solution, path, n_points: int = 400) -> None:
    """Value function against the payoff with the threshold marked."""
    from .continuous import value_at
    from .model import payoff_eval

    x_star = solution.threshold
    lo = solution.grid[0] if solution.grid is not None else x_star / 50.0
    xs = np.linspace(max(lo, 1e-9), 2.0 * x_star, n_points)
    vs = value_at(solution, xs)
    ps = payoff_eval(solution.problem.payoff, xs, 0)
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.plot(xs, vs, color="tab:blue", label="value")
    ax.plot(xs, ps, color="tab:gray", ls=":", label="payoff")
    ax.axvline(x_star, color="k", ls="--", alpha=0.7, label=f"x* = {x_star:.4f}")
    ax.set_xlabel("x")
    ax.set_ylabel("value")
    ax.set_title(f"continuous solution ({solution.kind}), curvature A = {solution.curvature:.4f}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_discrete(solution, problem, path) -> None:
    """Node values against the payoff with the discrete threshold marked."""
    phi = solution.payoff_values(problem)
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.plot(solution.nodes, solution.values, color="tab:blue", label="V_h")
    ax.plot(solution.nodes, phi, color="tab:gray", ls=":", label="payoff")
    if solution.threshold is not None:
        ax.axvline(solution.threshold, color="k", ls="--", alpha=0.7,
                   label=f"x*_h = {solution.threshold:.4f}")
        ax.set_xlim(0, 2.5 * solution.threshold)
        top = math.ceil(2.5 * solution.threshold)
        mask = solution.nodes <= top
        if mask.any():
            ax.set_ylim(0, float(solution.values[mask].max()) * 1.05)
    ax.set_xlabel("x")
    ax.set_ylabel("value")
    ax.set_title(f"discrete solution, h = {solution.h:g}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
