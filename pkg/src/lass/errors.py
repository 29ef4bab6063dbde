"""Exception types. The CLI maps these onto its exit codes."""


class LassError(Exception):
    pass


class ValidationError(LassError, ValueError):
    """Bad arguments or data (CLI exit code 1)."""


class ModelFileError(LassError):
    """Missing, unreadable or inconsistent model/data file (CLI exit code 2)."""
