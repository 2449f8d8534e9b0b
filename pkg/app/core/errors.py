# app/core/errors.py
from typing import Any, Dict, List, Optional


class ToolkitError(Exception):
    """Base class for every failure the services raise on purpose."""

    code = "ToolkitError"
    exit_code = 3

    def __init__(self, message: str, point: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.point = point

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"error": self.code, "message": self.message}
        if self.point is not None:
            payload["point"] = self.point
        return payload


# --- Validation ---

class ParameterError(ToolkitError):
    """Wraps every violated parameter constraint found in one validation pass."""

    code = "ParameterError"
    exit_code = 2

    def __init__(self, violations: List[Dict[str, Any]]):
        summary = "; ".join(f"{v['code']}({v['field']}): {v['message']}" for v in violations)
        super().__init__(f"Invalid parameters: {summary}")
        self.violations = violations

    @property
    def codes(self) -> List[str]:
        return [v["code"] for v in self.violations]

    def to_dict(self) -> Dict[str, Any]:
        payload = super().to_dict()
        payload["violations"] = self.violations
        return payload


class OutOfRegime(ToolkitError):
    code = "OutOfRegime"
    exit_code = 2


# --- Numerical failures ---

class InconsistentSteadyState(ToolkitError):
    code = "InconsistentSteadyState"


class EigensolverFailure(ToolkitError):
    code = "EigensolverFailure"


class BracketFailure(ToolkitError):
    code = "BracketFailure"


class SingularAtFrequency(ToolkitError):
    code = "SingularAtFrequency"

    def __init__(self, message: str, omega: float, point: Optional[Dict[str, Any]] = None):
        super().__init__(message, point)
        self.omega = omega


class TailNotConverged(ToolkitError):
    code = "TailNotConverged"


class StepOverflow(ToolkitError):
    code = "StepOverflow"


class InsufficientSamples(ToolkitError):
    code = "InsufficientSamples"


class NonStationary(ToolkitError):
    code = "NonStationary"


# --- Artifacts ---

class OutputError(ToolkitError):
    code = "OutputError"
    exit_code = 4


def to_http_exception(error: ToolkitError):
    """HTTPException carrying the error's diagnostics: 422 for bad input, 500 for numerical failures."""
    from fastapi import HTTPException

    status_code = 422 if isinstance(error, (ParameterError, OutOfRegime)) else 500
    return HTTPException(status_code=status_code, detail=error.to_dict())
