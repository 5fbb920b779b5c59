"""Exception hierarchy shared across the package.

Two failure families matter to callers: input/configuration problems
(ValidationError, CLI exit code 1) and numeric breakdowns during training
(NumericError, CLI exit code 2).
"""


class DebiasError(Exception):
    """Base class for all package errors."""


class ValidationError(DebiasError):
    """Bad input, configuration, schema, or shape."""


class NumericError(DebiasError):
    """Non-finite loss or other numeric failure during optimization."""
