"""Exception types raised by the estimation routines."""

from __future__ import annotations


class EstimationError(RuntimeError):
    """Base class for numerical failures during estimation."""


class SingularSystemError(EstimationError):
    """A linear system that must be inverted is singular or too ill conditioned."""

    def __init__(self, message: str, condition: float | None = None):
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)
        self.condition = condition


class GammaSelectionError(EstimationError):
    """Every candidate on the regularization grid failed to evaluate."""
