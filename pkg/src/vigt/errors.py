"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: config/usage problems exit 1,
verification failures exit 2, numeric failures exit 3.
"""


class ShapeError(ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class UsageError(RuntimeError):
    """An API was called in a way its contract forbids."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values."""


class FormatError(ValueError):
    """A file does not conform to its documented on-disk format."""
