"""Quasi-Gaussian distributions, Bayes-optimal multi-hypothesis decisions and mixture fitting."""

from ._accel import USE_NUMBA
from .decision import (
    DecisionRule,
    ErrorMatrix,
    GridSpec,
    HypothesisFamily,
    RiskReport,
    RuleValidationError,
    WeightMatrix,
    cost_density,
    cost_table,
    optimal_rule,
    risk_monte_carlo,
    risk_quadrature,
    validate_rule,
)
from .density import (
    MixtureModel,
    ModelValidationError,
    ProductDensity,
    QuasiGaussian1D,
    half_moment,
    load_model,
    log_pdf_product,
    mixture_pdf,
    pdf_1d,
    sample,
    save_model,
    solve_normalization,
)
from .estimation import (
    FitConfig,
    FitResult,
    fit,
    log_likelihood,
    polar_independence_test,
    recovery_experiment,
)
from .transport import (
    DiscreteAssignment,
    Grid,
    discrete_objective,
    discretize,
    integer_assignment,
    solve_assignment_lp,
)

__version__ = "0.1.0"
