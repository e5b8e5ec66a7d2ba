"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class ISDError(Exception):
    """Base class for library errors."""


class ConfigError(ISDError, ValueError):
    """Invalid configuration or specification."""


class DomainError(ISDError, ValueError):
    """A parameter lies outside the interior of its domain."""


class SupportError(ISDError, ValueError):
    """An observation lies outside the support of the density."""


class ShapeError(ISDError, ValueError):
    """Dimension mismatch between inputs."""


class NonDifferentiableError(ISDError, ValueError):
    """The log-density is not differentiable at the requested point."""


class NoInteriorSolution(ISDError, RuntimeError):
    """The update solver was driven to the boundary of the parameter domain."""


class MaxIterations(ISDError, RuntimeError):
    """The update solver did not reach its tolerance.

    Parameters
    ----------
    message : str
        Human readable description.
    best : ndarray, optional
        Best iterate found.
    residual : float, optional
        First-order residual at ``best``.
    """

    def __init__(self, message: str, best=None, residual: float = float("nan")):
        super().__init__(message)
        self.best = best
        self.residual = residual


class NonConcaveUnresolved(ISDError, RuntimeError):
    """Global search found no stationary point."""


class CrossedPredictions(ISDError, ValueError):
    """Quantile predictions are not strictly increasing across levels."""


class DomainEscape(ISDError, RuntimeError):
    """A prediction step left the parameter domain."""


class SpectralRadiusError(ISDError, ValueError):
    """The autoregressive matrix is not stable."""


class NotNonExpansive(ISDError, ValueError):
    """P - Phi' P Phi has a negative eigenvalue."""


class AllStartsFailed(ISDError, RuntimeError):
    """Every optimizer start diverged or failed to converge."""


class LengthMismatch(ISDError, ValueError):
    """Two series that must be aligned have different lengths."""
