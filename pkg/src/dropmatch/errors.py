"""Exception types shared across the package."""


class DropMatchError(Exception):
    """Base class for all package errors."""


class ConfigError(DropMatchError):
    """Invalid configuration value or malformed config/sweep file."""


class ValidationError(DropMatchError):
    """Input data violates a documented contract."""
