"""Error types shared across the package."""


class ExplainliError(Exception):
    """Base class for package errors."""


class InputDataError(ExplainliError):
    """Bad user input: malformed records, unknown labels, missing files."""


class CheckpointError(ExplainliError):
    """Unreadable, corrupt, or mismatched checkpoint."""
