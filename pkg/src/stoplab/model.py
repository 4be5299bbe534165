"""Problem instances: diffusion coefficients, payoffs, and validity checks.

A stopping problem is data, not code: general coefficients enter as
tabulations with monotone-cubic interpolation so instances serialize to a
plain JSON config and reproduce exactly. All types are immutable after
construction and all operations here are pure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DISCOUNT_NOT_POSITIVE,
    NONDIFFERENTIABLE_POINT,
    SIGMA_NOT_POSITIVE,
    VALIDATION_INFINITE_VALUE,
    BAD_ARGUMENT,
    ValidationError,
)
from .interp import pchip_eval

GBM = "GBM"
TABULATED = "TabulatedCoefficients"

CALL = "Call"
POWER_BASKET = "PowerBasket"


@dataclass(frozen=True)
class DiffusionSpec:
    """State process dS/S = b(S) dt + sigma(S) dB on a price domain.

    family "GBM": constant scalar coefficients, domain (0, inf).
    family "TabulatedCoefficients": node arrays over [x_lo, x_hi], evaluated
    between nodes by monotone-cubic interpolation.
    """

    family: str
    b: float | np.ndarray
    sigma: float | np.ndarray
    x_lo: float = 0.0
    x_hi: float = math.inf
    x_nodes: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in (GBM, TABULATED):
            raise ValidationError(f"unknown diffusion family {self.family!r}", BAD_ARGUMENT)
        if self.family == GBM:
            b, s = float(self.b), float(self.sigma)
            if not (math.isfinite(b) and math.isfinite(s)):
                raise ValidationError("GBM coefficients must be finite", BAD_ARGUMENT)
            object.__setattr__(self, "b", b)
            object.__setattr__(self, "sigma", s)
        else:
            xn = np.asarray(self.x_nodes, dtype=float)
            bn = np.asarray(self.b, dtype=float)
            sn = np.asarray(self.sigma, dtype=float)
            if xn.ndim != 1 or len(xn) < 4:
                raise ValidationError("tabulation needs at least 4 nodes", BAD_ARGUMENT)
            if len(bn) != len(xn) or len(sn) != len(xn):
                raise ValidationError("coefficient arrays must match node count", BAD_ARGUMENT)
            if not (np.all(np.isfinite(bn)) and np.all(np.isfinite(sn)) and np.all(np.isfinite(xn))):
                raise ValidationError("tabulated coefficients must be finite", BAD_ARGUMENT)
            if np.any(np.diff(xn) <= 0):
                raise ValidationError("tabulation nodes must be strictly increasing", BAD_ARGUMENT)
            object.__setattr__(self, "x_nodes", xn)
            object.__setattr__(self, "b", bn)
            object.__setattr__(self, "sigma", sn)
            object.__setattr__(self, "x_lo", float(xn[0]))
            object.__setattr__(self, "x_hi", float(xn[-1]))

    @classmethod
    def gbm(cls, b: float, sigma: float) -> "DiffusionSpec":
        return cls(family=GBM, b=b, sigma=sigma)

    @classmethod
    def tabulated(cls, x_nodes, b_values, sigma_values) -> "DiffusionSpec":
        return cls(family=TABULATED, b=b_values, sigma=sigma_values, x_nodes=x_nodes)

    @property
    def is_gbm(self) -> bool:
        return self.family == GBM

    def drift(self, x):
        if self.is_gbm:
            return self.b if np.ndim(x) == 0 else np.full(np.shape(x), self.b)
        self._check_domain(x)
        return pchip_eval(self.x_nodes, self.b, x)

    def vol(self, x):
        if self.is_gbm:
            return self.sigma if np.ndim(x) == 0 else np.full(np.shape(x), self.sigma)
        self._check_domain(x)
        return pchip_eval(self.x_nodes, self.sigma, x)

    def sigma_min(self) -> float:
        if self.is_gbm:
            return float(self.sigma)
        return float(np.min(self.sigma))

    def _check_domain(self, x):
        x = np.asarray(x)
        if np.any(x < self.x_lo) or np.any(x > self.x_hi):
            raise ValidationError(
                f"query outside tabulated domain [{self.x_lo}, {self.x_hi}]", "OUT_OF_DOMAIN"
            )


@dataclass(frozen=True)
class Payoff:
    """Nonnegative nondecreasing payoff with a single kink.

    Call: (x - k)^+. PowerBasket: (sum_i A_i x^a_i - k)^+ with A_i, a_i > 0.
    Derivatives are exact away from the kink and refuse to evaluate on it.
    """

    kind: str
    k: float
    terms: tuple[tuple[float, float], ...] = field(default=())

    def __post_init__(self):
        if self.kind not in (CALL, POWER_BASKET):
            raise ValidationError(f"unknown payoff kind {self.kind!r}", BAD_ARGUMENT)
        if self.k < 0:
            raise ValidationError("payoff floor k must be >= 0", BAD_ARGUMENT)
        if self.kind == POWER_BASKET:
            terms = tuple((float(a), float(p)) for a, p in self.terms)
            if not terms:
                raise ValidationError("PowerBasket needs at least one term", BAD_ARGUMENT)
            if any(a <= 0 or p <= 0 for a, p in terms):
                raise ValidationError("PowerBasket terms (A_i, a_i) must be positive", BAD_ARGUMENT)
            object.__setattr__(self, "terms", terms)

    @classmethod
    def call(cls, k: float) -> "Payoff":
        return cls(kind=CALL, k=k)

    @classmethod
    def power_basket(cls, terms, k: float) -> "Payoff":
        return cls(kind=POWER_BASKET, k=k, terms=tuple(tuple(t) for t in terms))

    @property
    def kink(self) -> float:
        """The point where the positive part switches on (0 if never binding)."""
        if self.kind == CALL:
            return self.k
        if self.k == 0.0:
            return 0.0
        # sum A_i x^a_i is increasing from 0; bisect for the crossing with k
        lo, hi = 1e-12, 1.0
        while self._basket(hi) < self.k:
            hi *= 2.0
            if hi > 1e12:
                raise ValidationError("PowerBasket kink not found below 1e12", BAD_ARGUMENT)
        while self._basket(lo) > self.k:
            lo /= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self._basket(mid) < self.k:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def _basket(self, x):
        return sum(a * x ** p for a, p in self.terms)

    def __call__(self, x):
        return payoff_eval(self, x, order=0)


def payoff_eval(payoff: Payoff, x, order: int = 0):
    """Exact value of the payoff or one of its first two derivatives.

    Derivatives exactly at the kink raise (the function is not differentiable
    there); solvers keep their stencils strictly above the kink.
    """
    if order not in (0, 1, 2):
        raise ValidationError("order must be 0, 1 or 2", BAD_ARGUMENT)
    xa = np.asarray(x, dtype=float)
    scalar = xa.ndim == 0
    xa = np.atleast_1d(xa)
    if np.any(xa <= 0):
        raise ValidationError("payoff defined for x > 0", BAD_ARGUMENT)

    if payoff.kind == CALL:
        above = xa > payoff.k
        if order == 0:
            out = np.where(above, xa - payoff.k, 0.0)
        else:
            if np.any(xa == payoff.k):
                raise ValidationError("nondifferentiable point", NONDIFFERENTIABLE_POINT)
            out = np.where(above, 1.0 if order == 1 else 0.0, 0.0)
    else:
        basket = np.zeros_like(xa)
        d1 = np.zeros_like(xa)
        d2 = np.zeros_like(xa)
        for a, p in payoff.terms:
            xp = a * xa ** p
            basket += xp
            d1 += p * xp / xa
            d2 += p * (p - 1.0) * xp / (xa * xa)
        above = basket > payoff.k
        if order == 0:
            out = np.where(above, basket - payoff.k, 0.0)
        else:
            if payoff.k > 0 and np.any(basket == payoff.k):
                raise ValidationError("nondifferentiable point", NONDIFFERENTIABLE_POINT)
            out = np.where(above, d1 if order == 1 else d2, 0.0)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class StoppingProblem:
    """A diffusion, a payoff, and a discount rate r > 0."""

    diffusion: DiffusionSpec
    payoff: Payoff
    r: float

    def __post_init__(self):
        if not (math.isfinite(self.r) and self.r > 0):
            raise ValidationError("discount rate r must be positive", DISCOUNT_NOT_POSITIVE)

    def to_config(self) -> dict:
        d = self.diffusion
        if d.is_gbm:
            diff = {"family": GBM, "b": d.b, "sigma": d.sigma}
        else:
            diff = {
                "family": TABULATED,
                "x": list(map(float, d.x_nodes)),
                "b": list(map(float, d.b)),
                "sigma": list(map(float, d.sigma)),
            }
        pay: dict = {"kind": self.payoff.kind, "k": self.payoff.k}
        if self.payoff.kind == POWER_BASKET:
            pay["terms"] = [list(t) for t in self.payoff.terms]
        return {"diffusion": diff, "payoff": pay, "r": self.r}

    @classmethod
    def from_config(cls, cfg: dict) -> "StoppingProblem":
        diff = cfg["diffusion"]
        if diff["family"] == GBM:
            diffusion = DiffusionSpec.gbm(diff["b"], diff["sigma"])
        elif diff["family"] == TABULATED:
            b = diff["b"]
            x = diff.get("x")
            if x is None:
                x = np.linspace(diff["x_lo"], diff["x_hi"], len(b))
            diffusion = DiffusionSpec.tabulated(x, b, diff["sigma"])
        else:
            raise ValidationError(f"unknown diffusion family {diff['family']!r}", BAD_ARGUMENT)
        pay = cfg["payoff"]
        if pay["kind"] == CALL:
            payoff = Payoff.call(pay["k"])
        elif pay["kind"] == POWER_BASKET:
            payoff = Payoff.power_basket(pay["terms"], pay["k"])
        else:
            raise ValidationError(f"unknown payoff kind {pay['kind']!r}", BAD_ARGUMENT)
        return cls(diffusion=diffusion, payoff=payoff, r=cfg["r"])

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_config(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "StoppingProblem":
        with open(path) as f:
            return cls.from_config(json.load(f))


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    reasons: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()


def validate_problem(problem: StoppingProblem) -> ValidationReport:
    """Checks the standing assumptions; raises on hard violations.

    Hard errors: sigma not bounded below by a positive constant, r <= 0, and
    the GBM-with-call case r <= b where the value is infinite (r < b) or
    linear with no optimal time (r = b). The drift condition
    r >= max(b(x) + x b'(x)) for tabulated coefficients with a call payoff is
    sufficient but not necessary, so its failure is only a warning.
    """
    d, p = problem.diffusion, problem.payoff
    if d.sigma_min() <= 0:
        raise ValidationError("sigma not bounded below by a positive constant", SIGMA_NOT_POSITIVE)
    if problem.r <= 0:
        raise ValidationError("discount rate r must be positive", DISCOUNT_NOT_POSITIVE)

    warnings: list[str] = []
    if d.is_gbm and p.kind == CALL:
        if problem.r <= d.b:
            raise ValidationError(
                "value infinite: GBM call needs r > b (value is +inf for r < b, "
                "linear with no optimal time at r = b)",
                VALIDATION_INFINITE_VALUE,
            )
    elif not d.is_gbm and p.kind == CALL:
        xn = d.x_nodes
        bn = np.asarray(d.b, dtype=float)
        bprime = np.gradient(bn, xn)  # centered differences, one-sided ends
        growth = float(np.max(bn + xn * bprime))
        if problem.r < growth:
            warnings.append(
                f"drift growth check failed: r={problem.r} < max(b + x b') = {growth:.6g} "
                "(sufficient condition only; threshold structure is verified on solver output)"
            )
    return ValidationReport(valid=True, warnings=tuple(warnings))


def gbm_step_exact(x, h: float, z, b: float, sigma: float):
    """One exact lognormal step: x * exp((b - sigma^2/2) h + sigma sqrt(h) z)."""
    if np.any(np.asarray(x) <= 0):
        raise ValidationError("gbm_step_exact needs x > 0", BAD_ARGUMENT)
    if h <= 0:
        raise ValidationError("gbm_step_exact needs h > 0", BAD_ARGUMENT)
    return x * np.exp((b - 0.5 * sigma * sigma) * h + sigma * math.sqrt(h) * np.asarray(z))
