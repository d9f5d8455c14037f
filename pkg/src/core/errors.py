from typing import Optional, Sequence

import numpy as np


class SuperresError(Exception):
    """Root of every error raised by the library."""


class CapabilityError(SuperresError, NotImplementedError):
    """A PSF was asked for a derivative order it cannot evaluate."""


class NumericalAccuracyError(SuperresError, ArithmeticError):
    """A quadrature failed its node-doubling self-check."""


class RankDeficiencyError(SuperresError, ArithmeticError):
    """The derivative set became numerically dependent during Gram-Schmidt."""

    def __init__(self, order: int, residual: float):
        self.order = order
        self.residual = residual
        super().__init__(
            f"BASIS: derivative of order {order} is numerically dependent on the lower orders "
            f"(residual norm {residual:.3e}); reduce the basis dimension."
        )


class TruncationError(SuperresError, ArithmeticError):
    """A displaced state is not captured by the truncated basis."""

    def __init__(self, residual: float, dimension: int, limit: float):
        self.residual = residual
        self.dimension = dimension
        self.limit = limit
        super().__init__(
            f"BASIS: truncation residual {residual:.3e} exceeds {limit:.1e} at N={dimension}; "
            f"use a larger basis dimension or a smaller displacement."
        )


class SingularFisherError(SuperresError, ArithmeticError):
    """Precisions were requested from a singular information matrix."""

    def __init__(self, null_direction: Sequence[float], detail: str = ""):
        self.null_direction = np.asarray(null_direction, dtype=float)
        direction = ", ".join(f"{v:+.4f}" for v in self.null_direction)
        super().__init__(f"FISHER: matrix is singular along (s0, s, q) = ({direction}). {detail}".strip())


class DomainError(SuperresError, ValueError):
    """A parameter lies outside the domain where the model is defined."""


class UsageError(SuperresError, ValueError):
    """Inputs are individually valid but inconsistent with each other."""


class FitFailure(SuperresError, RuntimeError):
    """A peak fit did not converge."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class DegenerateDataError(SuperresError, ValueError):
    """Outcome counts carry no information about the parameters."""


class ConfigError(SuperresError, ValueError):
    """A command-line configuration failed validation."""
