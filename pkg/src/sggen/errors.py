"""Exception hierarchy shared across the toolkit.

Three broad families, mirrored by the CLI exit codes: usage problems are
raised by argument handling itself, `DataError` covers malformed or
inconsistent inputs (exit code 2), and `NumericError` covers numerical
failures such as non-finite values (exit code 3).
"""


class SggenError(Exception):
    """Base class for all errors raised by this package."""


class DataError(SggenError):
    """Malformed, inconsistent, or out-of-range input data."""


class NumericError(SggenError):
    """Numerical failure (non-finite values, invalid tensor use)."""
