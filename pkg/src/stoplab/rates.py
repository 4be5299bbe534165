"""h-sweeps, rate fits, and theory-vs-measurement verdicts.

The boundary gap x* - x*^h scales like sqrt(h) with coefficient
gamma * x* * sigma(x*), and the relative value gap like h with coefficient
(1/2) A x*^2 sigma^2(x*) (theta - gamma^2). Fits use two-term models
(c sqrt(h) + d h, and c h + e h^{3/2}) so the next-order remainder is
absorbed instead of biasing the leading coefficient at practical h.

Estimated constants are injected rather than hardcoded so the Monte Carlo
error in them stays decoupled from (and attributable within) the rate
verification.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .continuous import ContinuousSolution, value_at
from .discrete import (
    DEFAULT_N_NODES,
    DEFAULT_QUAD_ORDER,
    DEFAULT_TOL_ITER,
    GridSpec,
    solve_discrete,
    value_at_h,
)
from .errors import BAD_ARGUMENT, DEGENERATE_CURVATURE, ValidationError
from .ladder import ConstantsEstimate
from .model import StoppingProblem


@dataclass(frozen=True)
class TheoryCoefficients:
    c_boundary: float   # gamma * x* * sigma(x*)
    c_value: float      # (1/2) A x*^2 sigma^2(x*) (theta - gamma^2)
    theta: float
    theta_se: float
    gamma: float
    gamma_se: float
    threshold: float
    sigma_at_threshold: float
    curvature: float


@dataclass(frozen=True)
class RateRow:
    h: float
    threshold_h: float
    boundary_gap: float       # x* - x*^h, positive
    v_h_at_ref: float
    rel_value_gap: float      # (V^h - V)/V at x_ref, negative


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[RateRow, ...]
    x_ref: float
    v_ref: float              # continuous value at x_ref
    threshold: float          # continuous threshold
    solutions: tuple          # per-h DiscreteSolution, same order as rows
    band_warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class RateFit:
    c_boundary: float
    boundary_correction: float   # coefficient of the absorbed h term
    boundary_residual: float     # rms residual of the fit
    c_value: float
    value_correction: float      # coefficient of the absorbed h^{3/2} term
    value_residual: float


@dataclass(frozen=True)
class RateVerdict:
    rel_err_boundary: float
    rel_err_value: float
    boundary_pass: bool
    value_pass: bool
    tol_boundary: float
    tol_value: float


def theory_coefficients(
    cont: ContinuousSolution, consts: ConstantsEstimate
) -> TheoryCoefficients:
    """Evaluate both rate-coefficient formulas with the supplied constants."""
    if cont.degenerate or cont.curvature <= 0:
        raise ValidationError(
            "rate theory inapplicable: curvature coefficient is not positive",
            DEGENERATE_CURVATURE,
        )
    x_star = cont.threshold
    sig = cont.sigma_at_threshold()
    c_boundary = consts.gamma * x_star * sig
    c_value = 0.5 * cont.curvature * x_star * x_star * sig * sig * (
        consts.theta - consts.gamma * consts.gamma
    )
    return TheoryCoefficients(
        c_boundary=c_boundary,
        c_value=c_value,
        theta=consts.theta,
        theta_se=consts.theta_se,
        gamma=consts.gamma,
        gamma_se=consts.gamma_se,
        threshold=x_star,
        sigma_at_threshold=sig,
        curvature=cont.curvature,
    )


@dataclass(frozen=True)
class SweepSolverConfig:
    n_nodes: int = DEFAULT_N_NODES
    quad_order: int = DEFAULT_QUAD_ORDER
    tol_iter: float = DEFAULT_TOL_ITER
    grid: GridSpec | None = None   # default: [x*/100, 10 x*]


def _solve_one(args):
    problem, h, grid, cfg, x_star = args
    return solve_discrete(
        problem, h, grid=grid, quad_order=cfg.quad_order,
        tol_iter=cfg.tol_iter, x_star_hint=x_star,
    )


def run_sweep(
    problem: StoppingProblem,
    h_list,
    x_ref: float,
    cont: ContinuousSolution,
    solver: SweepSolverConfig = SweepSolverConfig(),
    workers: int = 1,
) -> SweepResult:
    """Solve the discrete problem for each h and collect gap measurements.

    Per-h solves are independent; with workers > 1 they run in separate
    processes and are collected in h order, so the result is identical to the
    sequential run.
    """
    hs = [float(h) for h in h_list]
    if not hs:
        raise ValidationError("h_list must not be empty", BAD_ARGUMENT)
    if any(h <= 0 for h in hs):
        raise ValidationError("all h must be positive", BAD_ARGUMENT)
    if not all(a > b for a, b in zip(hs, hs[1:])):
        raise ValidationError("h_list must be strictly decreasing", BAD_ARGUMENT)
    x_star = cont.threshold
    if not 0.0 < x_ref < x_star:
        raise ValidationError(
            f"x_ref must lie in (0, x*) = (0, {x_star:.6g})", BAD_ARGUMENT
        )

    grid = solver.grid or GridSpec.around_threshold(x_star, solver.n_nodes)
    jobs = [(problem, h, grid, solver, x_star) for h in hs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            solutions = list(pool.map(_solve_one, jobs))
    else:
        solutions = [_solve_one(j) for j in jobs]

    v_ref = float(value_at(cont, x_ref))
    rows = []
    for h, sol in zip(hs, solutions):
        vh = float(value_at_h(sol, x_ref))
        rows.append(RateRow(
            h=h,
            threshold_h=sol.threshold,
            boundary_gap=x_star - sol.threshold,
            v_h_at_ref=vh,
            rel_value_gap=(vh - v_ref) / v_ref,
        ))

    warnings = _band_warnings(rows)
    return SweepResult(
        rows=tuple(rows), x_ref=x_ref, v_ref=v_ref, threshold=x_star,
        solutions=tuple(solutions), band_warnings=tuple(warnings),
    )


def _band_warnings(rows, boundary_band=0.25, value_band=0.30):
    """Flag when the scaled gaps wander outside the expected relative bands."""
    out = []
    bg = np.array([r.boundary_gap / math.sqrt(r.h) for r in rows])
    vg = np.array([-r.rel_value_gap / r.h for r in rows])
    for name, arr, band in (("boundary", bg, boundary_band), ("value", vg, value_band)):
        mid = 0.5 * (arr.max() + arr.min())
        if mid <= 0 or (arr.max() - arr.min()) / mid > band:
            out.append(
                f"{name} gap band {(arr.max() - arr.min()) / abs(mid):.3f} exceeds {band}"
            )
    return out


def fit_rates(rows) -> RateFit:
    """Least-squares fits of the two-term gap models."""
    if len(rows) < 3:
        raise ValidationError("need at least 3 sweep rows to fit", BAD_ARGUMENT)
    hs = np.array([r.h for r in rows])
    if len(np.unique(hs)) != len(hs):
        raise ValidationError("duplicate h values make the fit singular", BAD_ARGUMENT)
    bgap = np.array([r.boundary_gap for r in rows])
    vgap = np.array([-r.rel_value_gap for r in rows])

    xb = np.column_stack([np.sqrt(hs), hs])
    (cb, db), bres = _lstsq(xb, bgap)
    xv = np.column_stack([hs, hs ** 1.5])
    (cv, ev), vres = _lstsq(xv, vgap)
    return RateFit(
        c_boundary=float(cb), boundary_correction=float(db), boundary_residual=bres,
        c_value=float(cv), value_correction=float(ev), value_residual=vres,
    )


def _lstsq(design, target):
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < design.shape[1]:
        raise ValidationError("singular design matrix in rate fit", BAD_ARGUMENT)
    resid = target - design @ coef
    return coef, float(np.sqrt(np.mean(resid ** 2)))


def compare_report(
    fitted: RateFit,
    theory: TheoryCoefficients,
    tol_boundary: float = 0.10,
    tol_value: float = 0.15,
) -> RateVerdict:
    """Relative errors of the fitted leading coefficients vs the formulas."""
    eb = abs(fitted.c_boundary - theory.c_boundary) / theory.c_boundary
    ev = abs(fitted.c_value - theory.c_value) / theory.c_value
    return RateVerdict(
        rel_err_boundary=eb,
        rel_err_value=ev,
        boundary_pass=eb <= tol_boundary,
        value_pass=ev <= tol_value,
        tol_boundary=tol_boundary,
        tol_value=tol_value,
    )
