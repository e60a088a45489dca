"""Exception types shared across the package."""

from __future__ import annotations


class LogParseError(ValueError):
    """A malformed record in a raw action log.

    Carries the 1-based line number of the offending record.
    """

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DataValidationError(ValueError):
    """Input data violates a documented invariant (not a usage error)."""


class CheckpointError(IOError):
    """A checkpoint file is unreadable: bad magic, dims, or truncation."""


class NumericalFault(RuntimeError):
    """A non-finite value appeared during forward/backward/training."""

    def __init__(self, message: str, **context):
        if context:
            detail = ", ".join(f"{k}={v}" for k, v in sorted(context.items()))
            message = f"{message} ({detail})"
        super().__init__(message)
        self.context = context
