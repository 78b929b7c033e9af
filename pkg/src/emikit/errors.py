"""Shared exception hierarchy, mapped onto CLI exit codes."""


class EmikitError(Exception):
    """Base class for errors raised by this package."""


class UsageError(EmikitError):
    """Bad arguments or configuration (CLI exit code 1)."""


class DataFormatError(EmikitError):
    """Malformed or inconsistent data files (CLI exit code 2)."""


class NumericError(EmikitError):
    """Non-finite values encountered during training (CLI exit code 3)."""
