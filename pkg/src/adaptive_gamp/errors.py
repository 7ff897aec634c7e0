"""
Exception hierarchy shared by the numerical services and the CLI.

Every error renders to the ``{"error": ..., "details": ...}`` payload the
CLI prints on failure.
"""

from __future__ import annotations

from typing import Any


class AgampError(Exception):
    """Base class for every error raised by adaptive_gamp."""

    kind = "agamp_error"

    def to_dict(self) -> dict[str, Any]:
        return {"error": self.kind, "details": str(self)}


class ParameterValidationError(AgampError, ValueError):
    """Raised when a supplied value violates a parameter invariant."""

    kind = "invalid_parameter"


class DimensionError(ParameterValidationError):
    kind = "dimension_error"


class DomainError(ParameterValidationError):
    kind = "domain_error"


class DegenerateChannelError(DomainError):
    kind = "degenerate_channel"


class ConfigError(ParameterValidationError):
    kind = "config_error"


class ChannelOverflowError(AgampError, ArithmeticError):
    """A channel rate or quadrature accumulation became non-finite."""

    kind = "channel_overflow"

    def __init__(self, message: str, index: int | None = None) -> None:
        super().__init__(message)
        self.index = index

    def to_dict(self) -> dict[str, Any]:
        payload = super().to_dict()
        if self.index is not None:
            payload["index"] = self.index
        return payload


class AdaptationFailureError(AgampError, RuntimeError):
    kind = "adaptation_failure"


class ConvergenceError(AdaptationFailureError):
    """An ascent-type iteration lowered its own objective."""

    kind = "convergence_error"

    def __init__(self, message: str, iteration: int) -> None:
        super().__init__(f"{message} (iteration={iteration})")
        self.iteration = iteration

    def to_dict(self) -> dict[str, Any]:
        payload = super().to_dict()
        payload["iteration"] = self.iteration
        return payload


class DivergenceError(AgampError, RuntimeError):
    """An iterate or variance left the finite/positive range."""

    kind = "divergence"

    def __init__(self, message: str, step: str, iteration: int) -> None:
        super().__init__(f"{message} (step={step}, iteration={iteration})")
        self.step = step
        self.iteration = iteration

    def to_dict(self) -> dict[str, Any]:
        payload = super().to_dict()
        payload.update({"step": self.step, "iteration": self.iteration})
        return payload


class SeDivergenceError(DivergenceError):
    kind = "se_divergence"


class OutputDirectoryError(AgampError, OSError):
    """The output directory cannot be created or written."""

    kind = "io_error"
