"""Exception types shared across the package."""


class DimensionMismatchError(ValueError):
    """Raised when array shapes are inconsistent with the model dimension."""


class InvalidArgumentError(ValueError):
    """Raised for arguments outside an operation's domain."""


class NumericalError(RuntimeError):
    """Raised when a linear-algebra routine fails after jitter escalation.

    Carries the sequence of jitter values that were attempted.
    """

    def __init__(self, message: str, jitter_trace=None):
        super().__init__(message)
        self.jitter_trace = list(jitter_trace) if jitter_trace is not None else []


class StaleContextError(RuntimeError):
    """Raised when a cached fantasy context is used with a modified model."""
