"""stoplab: discrete-vs-continuous optimal stopping laboratory."""

__version__ = "0.1.0"

from .continuous import (
    ContinuousSolution,
    OdeConfig,
    compute_A,
    generator_residual,
    solve_gbm_call,
    solve_general,
    value_at,
)
from .discrete import (
    DiscreteSolution,
    GridSpec,
    TransitionKernel,
    build_transition,
    extract_threshold,
    solve_discrete,
    value_at_h,
    value_iteration,
)
from .errors import NumericalError, StopLabError, ValidationError
from .ladder import (
    ConstantsConfig,
    ConstantsEstimate,
    LadderSample,
    diagnose_fractional_uniformity,
    estimate_H_M,
    estimate_H_occupation,
    estimate_M_localtime,
    estimate_theta_gamma,
    sample_ladder,
)
from .model import (
    DiffusionSpec,
    Payoff,
    StoppingProblem,
    gbm_step_exact,
    payoff_eval,
    validate_problem,
)
from .rates import (
    RateFit,
    RateRow,
    SweepResult,
    TheoryCoefficients,
    compare_report,
    fit_rates,
    run_sweep,
    theory_coefficients,
)
