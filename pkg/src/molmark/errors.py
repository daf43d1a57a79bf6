"""Exception hierarchy shared across the package."""


class MolmarkError(Exception):
    """Base class for all package errors."""


class UsageError(MolmarkError):
    """Bad command-line usage or inconsistent configuration."""


class DataError(MolmarkError):
    """Malformed input data (corpus files, config files, checkpoints)."""


class ParseError(DataError):
    """Text record could not be parsed; message names file/line where known."""


class NumericError(MolmarkError):
    """Non-finite values or invariant violations in numeric computations."""
