"""Variance transmission analysis and robust parameter design.

Propagates design-variable variation through an algebraic transfer
function (first-order, with correlation cross terms), decomposes the
transmitted variance per source, verifies the approximation by Monte
Carlo, and optimises design nominals to hit a target response with
minimum transmitted variance.
"""

from .autodiff import Dual, Gradient, check_gradient, partials
from .design import (
    DesignSolution,
    FeasibilityReport,
    InfeasibleStudyError,
    Study,
    SweepRow,
    Tolerances,
    evaluate_candidate,
    optimize,
    sweep_correlation,
)
from .expr import (
    EvalError,
    Expr,
    ExprSyntaxError,
    evaluate,
    evaluate_array,
    parse,
    to_text,
    variables,
)
from .mc import McEstimate, McSampleError, simulate
from .pi_groups import DimensionedVariable, DimensionError, PiGroup, infer_dimensions
from .pi_groups import reduce as pi_reduce
from .synthesis import (
    Correlation,
    CorrelationError,
    CorrelationSet,
    DesignVariable,
    LinkModel,
    RankedContribution,
    VarianceDecomposition,
    rank_contributions,
    sigma_of,
    transmit,
    transmit_at,
)

__version__ = "0.1.0"

__all__ = [
    "Correlation",
    "CorrelationError",
    "CorrelationSet",
    "DesignSolution",
    "DesignVariable",
    "DimensionError",
    "DimensionedVariable",
    "Dual",
    "EvalError",
    "Expr",
    "ExprSyntaxError",
    "FeasibilityReport",
    "Gradient",
    "InfeasibleStudyError",
    "LinkModel",
    "McEstimate",
    "McSampleError",
    "PiGroup",
    "RankedContribution",
    "Study",
    "SweepRow",
    "Tolerances",
    "VarianceDecomposition",
    "check_gradient",
    "evaluate",
    "evaluate_array",
    "evaluate_candidate",
    "infer_dimensions",
    "optimize",
    "parse",
    "partials",
    "pi_reduce",
    "rank_contributions",
    "sigma_of",
    "simulate",
    "sweep_correlation",
    "to_text",
    "transmit",
    "transmit_at",
    "variables",
]
