"""Exception types with stable machine-readable codes.

Every error that can surface through the CLI carries a short stable code so
scripts can dispatch on failures without parsing messages. Exit classes:
domain errors exit 1, usage errors exit 2 (argparse handles those), numerical
failures exit 3.
"""

from __future__ import annotations


class StopLabError(Exception):
    """Base class; subclasses set `code` and `exit_status`."""

    code = "ERROR"
    exit_status = 1

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ValidationError(StopLabError):
    """Problem or argument violates a domain precondition."""

    code = "VALIDATION"
    exit_status = 1


class NumericalError(StopLabError):
    """A numerical procedure failed (no convergence, lost bracket, ...)."""

    code = "NUMERICAL"
    exit_status = 3


# Stable codes used across the package.
SIGMA_NOT_POSITIVE = "SIGMA_NOT_POSITIVE"
DISCOUNT_NOT_POSITIVE = "DISCOUNT_NOT_POSITIVE"
VALIDATION_INFINITE_VALUE = "VALIDATION_INFINITE_VALUE"
NONDIFFERENTIABLE_POINT = "NONDIFFERENTIABLE_POINT"
OUT_OF_DOMAIN = "OUT_OF_DOMAIN"
PAYOFF_VANISHES = "PAYOFF_VANISHES"
BAD_ARGUMENT = "BAD_ARGUMENT"
CAP_TOO_SMALL = "CAP_TOO_SMALL"
NO_CONVERGENCE = "NO_CONVERGENCE"
ROOT_NOT_BRACKETED = "ROOT_NOT_BRACKETED"
THRESHOLD_NOT_BRACKETED = "THRESHOLD_NOT_BRACKETED"
GRID_TOO_NARROW = "GRID_TOO_NARROW"
INSUFFICIENT_HITS = "INSUFFICIENT_HITS"
NONFINITE_REPORT = "NONFINITE_REPORT"
EXERCISE_SET_NOT_INTERVAL = "EXERCISE_SET_NOT_INTERVAL"
DEGENERATE_CURVATURE = "DEGENERATE_CURVATURE"
