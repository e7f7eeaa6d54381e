"""Exception types shared across the package."""


class KatoSdeError(Exception):
    """Base class for all package errors."""


class ValidationError(KatoSdeError):
    """A parameter violates a documented admissibility condition."""


class DomainError(KatoSdeError):
    """An argument is outside the mathematical domain of an operation."""


class NumericError(KatoSdeError):
    """A non-finite intermediate value was produced."""

    def __init__(self, message, t=None, x=None):
        super().__init__(message)
        self.t = t
        self.x = x


class AccuracyError(KatoSdeError):
    """Quadrature refinement failed to converge.

    Carries the last two estimates so callers can judge how bad it is.
    """

    def __init__(self, message, last=None, previous=None):
        super().__init__(message)
        self.last = last
        self.previous = previous


class InsufficientDataError(KatoSdeError):
    """Not enough usable points for a fit or a histogram."""


class HorizonNotFoundError(KatoSdeError):
    """No horizon in the search grid satisfies the contraction budget."""


class ContractionViolationError(KatoSdeError):
    """Picard increments stopped contracting."""


class NoConvergenceError(KatoSdeError):
    """Iteration limit exceeded before reaching the tolerance."""


class ConfigurationError(KatoSdeError):
    """Inconsistent or invalid experiment configuration."""
