"""Exception types shared across the package.

The CLI maps these onto exit codes: DataError -> 2, NumericError -> 3.
"""


class DefogError(Exception):
    """Base class for package-level failures."""


class DataError(DefogError):
    """Malformed, truncated, or mismatched files and schemas."""


class NumericError(DefogError):
    """Non-finite values encountered during training or inference."""
