"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: configuration and data
format problems exit 2, numerical failures exit 3.
"""


class TogateError(Exception):
    """Base class for all package errors."""


class ConfigError(TogateError, ValueError):
    """Invalid configuration, parameters, or usage."""


class DataFormatError(TogateError, ValueError):
    """Malformed or truncated serialized data."""


class NumericsError(TogateError, ArithmeticError):
    """Non-finite values encountered during optimization."""


class InstanceTooLargeError(TogateError):
    """Brute-force enumeration refused because the instance is too large."""


class TransportError(TogateError):
    """Remote backend request failed after exhausting retries."""


class TemplateError(TogateError, ValueError):
    """Prompt template rendering failed."""
