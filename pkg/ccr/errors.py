# ccr/errors.py
"""Exception hierarchy shared by the library and the batch front end."""

from __future__ import annotations


class CCRError(Exception):
    """Base class for every error raised by the package."""

    code = "ccr_error"
    exit_status = 1

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict:
        payload = {"error": self.code, "message": self.message}
        if self.details:
            payload["details"] = self.details
        return payload


class DomainError(CCRError, ValueError):
    """Parameter or argument outside its mathematical domain."""

    code = "domain_error"


class DegenerateConditionalError(CCRError):
    """Conditioning event has zero probability (f_N(n) = 0)."""

    code = "degenerate_conditional"
    exit_status = 3


class NumericError(CCRError):
    """Root bracketing or series evaluation failed."""

    code = "numeric_error"
    exit_status = 3


class DataValidationError(CCRError, ValueError):
    """Dataset content is inconsistent with the observation scheme."""

    code = "data_validation_error"

    def __init__(self, message: str, policy_ids=None, **details):
        if policy_ids is not None:
            details["policy_ids"] = [str(p) for p in policy_ids]
        super().__init__(message, **details)
        self.policy_ids = list(policy_ids) if policy_ids is not None else []


class ConfigError(CCRError):
    """Run configuration is missing or malformed."""

    code = "config_error"


class EstimationError(CCRError):
    """A fit cannot be carried out or compared."""

    code = "estimation_error"


class ConvergenceError(EstimationError):
    """Raised by the front end when a fit ends without convergence."""

    code = "not_converged"
    exit_status = 2
