"""Discrete-monitoring stopping by quadrature-kernel value iteration.

The one-step expectation is a Gauss-Hermite quadrature through the exact
lognormal transition (frozen-coefficient lognormal for tabulated drift and
volatility, which introduces an O(h) kernel bias, so rate experiments run on
constant coefficients). The Bellman operator iterates on a log-spaced grid
with monotone-cubic interpolation between nodes, a contraction with factor
exp(-r h); the stopping tolerance is scaled by (1 - exp(-r h)) so the fixed
point's sup-norm error is bounded by the tolerance itself.

The exercise threshold is read off the converged solution as the root of
continuation-minus-payoff, which crosses zero transversally, rather than as
the first node where the value meets the payoff (which vanishes
tangentially and is badly conditioned).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BAD_ARGUMENT,
    EXERCISE_SET_NOT_INTERVAL,
    GRID_TOO_NARROW,
    NO_CONVERGENCE,
    OUT_OF_DOMAIN,
    THRESHOLD_NOT_BRACKETED,
    NumericalError,
    ValidationError,
)
from .interp import FixedQueryInterpolator, pchip_eval
from .model import CALL, StoppingProblem, gbm_step_exact, payoff_eval

DEFAULT_N_NODES = 4096
DEFAULT_QUAD_ORDER = 64
DEFAULT_TOL_ITER = 1e-10
DEFAULT_K_MAX = 1_000_000
CLAMP_TOLERANCE = 1e-8  # max clamped mass allowed at nodes near the threshold


@dataclass(frozen=True)
class GridSpec:
    """Log-uniform state grid; must bracket the threshold with margin."""

    x_min: float
    x_max: float
    n_nodes: int = DEFAULT_N_NODES

    def __post_init__(self):
        if not 0 < self.x_min < self.x_max:
            raise ValidationError("need 0 < x_min < x_max", BAD_ARGUMENT)
        if self.n_nodes < 64:
            raise ValidationError("grid needs at least 64 nodes", BAD_ARGUMENT)

    def nodes(self) -> np.ndarray:
        return np.exp(np.linspace(math.log(self.x_min), math.log(self.x_max), self.n_nodes))

    @classmethod
    def around_threshold(cls, x_star: float, n_nodes: int = DEFAULT_N_NODES) -> "GridSpec":
        return cls(x_min=x_star / 100.0, x_max=10.0 * x_star, n_nodes=n_nodes)


@dataclass(frozen=True)
class TransitionKernel:
    """Per-node quadrature approximating the one-step expectation."""

    h: float
    quad_order: int
    grid: GridSpec
    nodes: np.ndarray          # (n,)
    dest: np.ndarray           # (n, Q) destinations, clamped into the grid
    weights: np.ndarray        # (Q,) Gauss-Hermite weights, sum to 1
    clamped_mass: np.ndarray   # (n,) weight that hit a boundary clamp
    interp: FixedQueryInterpolator

    def apply(self, values: np.ndarray, slopes: np.ndarray | None = None) -> np.ndarray:
        """E[g(S_h) | S_0 = node] for g given by node values (interpolated)."""
        y = self.interp(values, slopes).reshape(self.dest.shape)
        return (y * self.weights).sum(axis=1)


@dataclass(frozen=True)
class DiscreteSolution:
    h: float
    grid: GridSpec
    nodes: np.ndarray
    values: np.ndarray          # V^h at nodes
    continuation: np.ndarray    # discounted kernel applied to the fixed point
    threshold: float | None
    iterations: int
    final_update: float
    tol_iter: float
    clamped_mass_max: float

    def payoff_values(self, problem: StoppingProblem) -> np.ndarray:
        return payoff_eval(problem.payoff, self.nodes, 0)

    def solution_tolerance(self, problem: StoppingProblem) -> float:
        """eps_sol: the ordering-invariant allowance, 10 * tol * max payoff."""
        return 10.0 * self.tol_iter * float(np.max(self.payoff_values(problem)))


def build_transition(
    problem: StoppingProblem,
    h: float,
    grid: GridSpec,
    quad_order: int = DEFAULT_QUAD_ORDER,
    x_star_hint: float | None = None,
) -> TransitionKernel:
    """Gauss-Hermite one-step kernel with an absorbing boundary clamp.

    Destinations falling outside the grid are moved to the boundary node and
    keep their weight, so weights still sum to one; the moved mass is recorded
    per node and the build fails if any node at or below 1.1x the reference
    threshold loses more than 1e-8 of mass (the grid is then too narrow for
    threshold work).
    """
    if h <= 0:
        raise ValidationError("need h > 0", BAD_ARGUMENT)
    if quad_order < 2:
        raise ValidationError("quadrature order must be >= 2", BAD_ARGUMENT)
    nodes = grid.nodes()
    zq, wq = np.polynomial.hermite.hermgauss(int(quad_order))
    zq = zq * math.sqrt(2.0)
    wq = wq / math.sqrt(math.pi)

    d = problem.diffusion
    if d.is_gbm:
        dest = gbm_step_exact(nodes[:, None], h, zq[None, :], d.b, d.sigma)
    else:
        bn = np.asarray(d.drift(nodes))[:, None]
        sn = np.asarray(d.vol(nodes))[:, None]
        dest = nodes[:, None] * np.exp((bn - 0.5 * sn * sn) * h + sn * math.sqrt(h) * zq[None, :])

    below = dest < nodes[0]
    above = dest > nodes[-1]
    clamped_lo = (wq[None, :] * below).sum(axis=1)
    clamped_hi = (wq[None, :] * above).sum(axis=1)
    clamped_mass = clamped_lo + clamped_hi
    dest = np.clip(dest, nodes[0], nodes[-1])

    # Nodes within the diffusion's one-step reach of x_min unavoidably clamp
    # downward for any grid; the hazard is clamping that feeds the threshold
    # region, so the check covers upward clamping everywhere at or below
    # 1.1x the reference threshold, and downward clamping there outside the
    # lower boundary layer.
    x_ref = _threshold_reference(problem, x_star_hint, grid)
    near = nodes <= 1.1 * x_ref
    sig_max = float(np.max(np.asarray(problem.diffusion.vol(nodes)))) if not d.is_gbm else d.sigma
    bottom_layer = nodes <= nodes[0] * math.exp(6.0 * sig_max * math.sqrt(h))
    hazardous = (clamped_hi * near) + (clamped_lo * (near & ~bottom_layer))
    if np.any(hazardous > CLAMP_TOLERANCE):
        worst = float(np.max(hazardous))
        raise NumericalError(
            f"grid too narrow: clamped mass {worst:.3g} near the threshold", GRID_TOO_NARROW
        )

    return TransitionKernel(
        h=h, quad_order=int(quad_order), grid=grid, nodes=nodes, dest=dest,
        weights=wq, clamped_mass=clamped_mass,
        interp=FixedQueryInterpolator(nodes, dest.ravel()),
    )


def _threshold_reference(problem: StoppingProblem, hint: float | None, grid: GridSpec) -> float:
    if hint is not None:
        return float(hint)
    if problem.diffusion.is_gbm and problem.payoff.kind == CALL:
        from .continuous import solve_gbm_call

        return solve_gbm_call(
            problem.diffusion.b, problem.diffusion.sigma, problem.r, problem.payoff.k
        ).threshold
    return 0.11 * grid.x_max  # matches x* * 1.1 on the default grid shape


def value_iteration(
    problem: StoppingProblem,
    h: float,
    grid: GridSpec,
    kernel: TransitionKernel,
    tol_iter: float = DEFAULT_TOL_ITER,
    k_max: int = DEFAULT_K_MAX,
) -> DiscreteSolution:
    """Iterate V <- max(payoff, e^{-rh} K V) from V = payoff to the fixed point."""
    if kernel.h != h or kernel.grid != grid:
        raise ValidationError("kernel was built for a different h or grid", BAD_ARGUMENT)
    nodes = kernel.nodes
    phi = payoff_eval(problem.payoff, nodes, 0)
    disc = math.exp(-problem.r * h)
    stop_scale = tol_iter * (1.0 - disc)

    v = phi.copy()
    update = math.inf
    for it in range(1, int(k_max) + 1):
        cont = disc * kernel.apply(v)
        v_next = np.maximum(phi, cont)
        update = float(np.max(np.abs(v_next - v)))
        v = v_next
        if update <= stop_scale:
            break
    else:
        raise NumericalError(
            f"no convergence in {k_max} iterations (last update {update:.3e})",
            NO_CONVERGENCE,
        )

    cont = disc * kernel.apply(v)
    return DiscreteSolution(
        h=h, grid=grid, nodes=nodes, values=v, continuation=cont,
        threshold=None, iterations=it, final_update=update, tol_iter=tol_iter,
        clamped_mass_max=float(np.max(kernel.clamped_mass)),
    )


def _fresh_continuation(problem, kernel, solution, x: float) -> float:
    """e^{-rh} sum_q w_q V^h(dest_q(x)) with a fresh quadrature at x."""
    d = problem.diffusion
    zq, wq = np.polynomial.hermite.hermgauss(kernel.quad_order)
    zq = zq * math.sqrt(2.0)
    wq = wq / math.sqrt(math.pi)
    if d.is_gbm:
        dest = gbm_step_exact(x, kernel.h, zq, d.b, d.sigma)
    else:
        bb = float(d.drift(x))
        ss = float(d.vol(x))
        dest = x * np.exp((bb - 0.5 * ss * ss) * kernel.h + ss * math.sqrt(kernel.h) * zq)
    dest = np.clip(dest, solution.nodes[0], solution.nodes[-1])
    vals = pchip_eval(solution.nodes, solution.values, dest)
    disc = math.exp(-problem.r * kernel.h)
    return disc * float((vals * wq).sum())


def extract_threshold(
    problem: StoppingProblem,
    h: float,
    kernel: TransitionKernel,
    solution: DiscreteSolution,
    rel_tol: float = 1e-8,
) -> float:
    """Root of continuation minus payoff, bracketed on the grid then bisected."""
    phi = solution.payoff_values(problem)
    g_nodes = solution.continuation - phi
    pos_to_neg = np.where((g_nodes[:-1] > 0) & (g_nodes[1:] <= 0))[0]
    if pos_to_neg.size == 0:
        raise NumericalError(
            "threshold not bracketed (grid or h out of range)", THRESHOLD_NOT_BRACKETED
        )
    i = int(pos_to_neg[-1])
    lo, hi = solution.nodes[i], solution.nodes[i + 1]

    def g(x: float) -> float:
        return _fresh_continuation(problem, kernel, solution, x) - payoff_eval(problem.payoff, x, 0)

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rel_tol * mid:
            break
    return 0.5 * (lo + hi)


def value_at_h(solution: DiscreteSolution, x):
    """Monotone-cubic readout of the node values; exact at nodes."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < solution.nodes[0]) or np.any(xa > solution.nodes[-1]):
        raise ValidationError("x outside the solution grid", OUT_OF_DOMAIN)
    return pchip_eval(solution.nodes, solution.values, x)


def exercise_region_start(
    problem: StoppingProblem, solution: DiscreteSolution
) -> int:
    """First node index of the exercise set; raises if the set has holes.

    The set {V^h = payoff within eps_sol} must be an upper interval of the
    grid (threshold structure); a violation aborts rate analysis for the
    instance rather than being repaired.
    """
    phi = solution.payoff_values(problem)
    eps = solution.solution_tolerance(problem)
    exercised = np.abs(solution.values - phi) <= eps
    if not exercised.any():
        raise NumericalError(
            "no exercise region on the grid", THRESHOLD_NOT_BRACKETED
        )
    first = int(np.argmax(exercised))
    if not exercised[first:].all():
        raise NumericalError(
            "exercise set is not an upper interval of the grid", EXERCISE_SET_NOT_INTERVAL
        )
    return first


def solve_discrete(
    problem: StoppingProblem,
    h: float,
    grid: GridSpec | None = None,
    quad_order: int = DEFAULT_QUAD_ORDER,
    tol_iter: float = DEFAULT_TOL_ITER,
    k_max: int = DEFAULT_K_MAX,
    x_star_hint: float | None = None,
) -> DiscreteSolution:
    """Kernel build, value iteration, threshold extraction, structure check."""
    if grid is None:
        x_ref = _threshold_reference(problem, x_star_hint, GridSpec(1.0, 10.0))
        grid = GridSpec.around_threshold(x_ref)
    kernel = build_transition(problem, h, grid, quad_order, x_star_hint)
    solution = value_iteration(problem, h, grid, kernel, tol_iter, k_max)
    exercise_region_start(problem, solution)
    threshold = extract_threshold(problem, h, kernel, solution)
    return replace(solution, threshold=threshold)
