"""Shared exception types."""


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes; message names both."""


class ConfigError(Exception):
    """Invalid or unknown configuration key/value. CLI exit code 2."""


class NumericError(RuntimeError):
    """Non-finite value encountered during training. CLI exit code 3."""


class SpectralError(RuntimeError):
    """Internal consistency failure in a Fourier round trip."""
