"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad input: shape mismatch, out-of-range value, malformed file."""


class DataFormatError(ValidationError):
    """A dataset, manifest, or checkpoint file failed to parse."""


class NumericsError(RuntimeError):
    """A computation produced non-finite values."""
