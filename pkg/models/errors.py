from typing import Any, Dict, Optional


class OfflabError(Exception):
    code = "error"

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.code, "message": str(self)}


class InvalidParameterError(OfflabError, ValueError):
    """A parameter violates its documented constraint.

    Args:
    flag (str): The user-facing name of the offending parameter (CLI flag spelling).
    constraint (str): The constraint that was violated.
    """

    code = "invalid-parameter"

    def __init__(self, flag: str, constraint: str):
        self.flag = flag
        self.constraint = constraint
        super().__init__(f"{flag}: {constraint}")

    def to_dict(self) -> Dict[str, Any]:
        return {**super().to_dict(), "flag": self.flag, "constraint": self.constraint}


class DegenerateCorrelationError(InvalidParameterError):
    code = "degenerate-correlation"


class FlipCountError(InvalidParameterError):
    code = "fn-too-small"


class SliceTooThinError(InvalidParameterError):
    code = "slice-too-thin"


class NumericError(OfflabError, ArithmeticError):
    """A computation could not produce a trustworthy number.

    Args:
    message (str): What failed.
    diagnostics (dict): Values that help reproduce the failure.
    """

    code = "numeric"

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)

    def to_dict(self) -> Dict[str, Any]:
        return {**super().to_dict(), "diagnostics": self.diagnostics}


class QuadratureError(NumericError):
    code = "quadrature"


class UnreliableTailError(NumericError):
    code = "unreliable-tail"


class ConditioningError(NumericError):
    code = "empty-conditioning"


class UndefinedOffError(NumericError):
    code = "undefined-off"


class DegenerateSeriesError(NumericError):
    code = "degenerate-series"


class AttemptsExhaustedError(NumericError):
    code = "attempts-exhausted"
