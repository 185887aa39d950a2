"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage errors exit 1, data
errors exit 2, numerical failures exit 3.
"""


class TensorMemError(Exception):
    """Base class for all package errors."""


class UsageError(TensorMemError):
    """Caller misuse: bad arguments, bad query pattern, wrong model family."""

    exit_code = 1


class DataError(TensorMemError):
    """Malformed input data, unknown labels, shape or kind mismatches."""

    exit_code = 2


class NumericalError(TensorMemError):
    """Numerical failure: divergence, negative mass on the exact path."""

    exit_code = 3


class UnknownIdError(DataError):
    """An id that was never registered."""


class KindError(DataError):
    """An id of the wrong kind for a slot."""


class ShapeError(DataError):
    """Array dimensions do not match the configured model."""
