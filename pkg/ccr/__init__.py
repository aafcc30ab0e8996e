"""Copula-linked frequency-severity regression for insurance claims."""

from ccr.compound import (
    ClaimRecord,
    CompoundModel,
    CompoundModelSpec,
    Dataset,
    PolicyRecord,
    cond_cdf,
    cond_pdf,
    loglik_censored,
    loglik_complete,
    loglik_truncated,
    portfolio_loglik,
)
from ccr.copulas import CopulaSpec
from ccr.errors import (
    CCRError,
    ConfigError,
    ConvergenceError,
    DataValidationError,
    DegenerateConditionalError,
    DomainError,
    EstimationError,
    NumericError,
)
from ccr.estimation import FitResult, fit_full, fit_independence, fit_two_stage, model_selection
from ccr.marginals import CountFamily, LinearPredictor, SeverityFamily

__version__ = "1.0.0"

__all__ = [
    "ClaimRecord", "CompoundModel", "CompoundModelSpec", "Dataset", "PolicyRecord",
    "cond_cdf", "cond_pdf", "loglik_complete", "loglik_censored", "loglik_truncated", "portfolio_loglik",
    "CopulaSpec", "CountFamily", "LinearPredictor", "SeverityFamily",
    "FitResult", "fit_full", "fit_independence", "fit_two_stage", "model_selection",
    "CCRError", "ConfigError", "ConvergenceError", "DataValidationError", "DegenerateConditionalError",
    "DomainError", "EstimationError", "NumericError",
]
