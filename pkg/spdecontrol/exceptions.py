from typing import Optional, Sequence


class LabError(Exception):
    """
    Base error of the laboratory.

    Params:
        detail (str): Human readable description of the failure.

    Attributes:
        exit_code (int): Process exit status the command line maps this error to.
    """

    exit_code: int = 2

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(LabError):
    """Invalid, unknown or missing configuration."""

    exit_code = 1


class DomainError(LabError, ValueError):
    """An argument lies outside the domain of an operation."""


class NumericalError(LabError):
    """A computation could not produce a trustworthy result."""


class NonFiniteError(NumericalError):
    """Nonfinite values entered or appeared in a computation."""


class UnboundedSourceError(NumericalError):
    """Weighted sources are not square integrable on the division window."""


class GramianConditioningError(NumericalError):
    """
    The controllability Gramian is singular to working precision.

    Params:
        detail (str): Description of the failure.
        condition (float): Condition estimate of the Gramian.
        window (Optional[int]): Index of the active window or block, when known.
    """

    def __init__(self, detail: str, condition: float, window: Optional[int] = None):
        if window is not None:
            detail = f"{detail} (window {window})"
        super().__init__(detail)
        self.condition = condition
        self.window = window


class DivergenceError(NumericalError):
    """
    The Picard iteration failed to contract.

    Params:
        detail (str): Description of the failure.
        ratios (Sequence[float]): Contraction ratios observed so far.
    """

    def __init__(self, detail: str, ratios: Sequence[float] = ()):
        super().__init__(detail)
        self.ratios = list(ratios)


class InvariantViolation(LabError):
    """A verified invariant does not hold."""

    exit_code = 3
