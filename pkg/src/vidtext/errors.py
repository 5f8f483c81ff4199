"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data/schema
problems exit 2, numeric failures exit 3.
"""


class ShapeError(ValueError):
    """Tensor dimensions do not line up for the requested operation."""


class ConfigError(ValueError):
    """An option or hyperparameter is outside its valid range."""


class UsageError(RuntimeError):
    """An operation was invoked in a way its contract forbids."""


class DataError(ValueError):
    """A corpus, task file, or checkpoint failed schema validation."""


class NumericError(ArithmeticError):
    """A non-finite value was produced where finiteness is required."""
