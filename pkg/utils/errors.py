"""
Exception hierarchy for AnosovLab.

Every error raised on purpose by the library derives from LabError, which
knows its machine-readable code, the process exit code the front end should
use, and any structured details worth putting in the error document.
"""

from typing import Any, Dict, Optional

from config import SCHEMA_VERSION


class LabError(Exception):
    """Base class for all domain errors."""

    code = "lab_error"
    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Serialize the error as a JSON-ready document."""
        return {
            "error": self.code,
            "message": self.message,
            "details": self.details,
            "schema_version": SCHEMA_VERSION,
        }


class ConfigError(LabError):
    """A scenario file or flag failed validation."""

    code = "config_error"
    exit_code = 2

    def __init__(self, message: str, field: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, {"field": field, **(details or {})})
        self.field = field


class InvalidElement(LabError):
    code = "invalid_element"


class BasisMismatch(LabError):
    code = "basis_mismatch"


class InvalidTheta(LabError):
    code = "invalid_theta"


class NotAntipodal(LabError):
    code = "not_antipodal"


class NotProximal(LabError):
    code = "not_proximal"


class AngleUnderflow(LabError):
    code = "angle_underflow"


class BudgetExceeded(LabError):
    code = "budget_exceeded"

    def __init__(self, count: int, budget: int):
        super().__init__(
            f"Ball would contain {count} records, budget is {budget}",
            {"count": count, "budget": budget},
        )
        self.count = count


class DegenerateForm(LabError):
    code = "degenerate_form"


class InsufficientScales(LabError):
    code = "insufficient_scales"


class InsufficientSample(LabError):
    code = "insufficient_sample"


class ScaleRangeTooNarrow(LabError):
    code = "scale_range_too_narrow"


class OptimFailed(LabError):
    code = "optim_failed"

    def __init__(self, message: str, best_value: float, grad_norm: float):
        super().__init__(message, {"best_value": best_value, "grad_norm": grad_norm})
        self.best_value = best_value
        self.grad_norm = grad_norm
