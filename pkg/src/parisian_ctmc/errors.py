"""Exception types shared across the package."""

from __future__ import annotations


class ParisianError(Exception):
    """Base class for all package errors."""


class ConfigError(ParisianError, ValueError):
    """Invalid or missing configuration field.

    ``field`` carries the dotted path of the offending entry when known.
    """

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class DomainError(ParisianError, ValueError):
    """Input outside the mathematical domain of an operation."""


class NumericalError(ParisianError, ArithmeticError):
    """Factorization, quadrature or inversion failure."""


class GeneratorError(ParisianError, ValueError):
    """A transition-rate matrix could not be built as a valid CTMC generator."""
