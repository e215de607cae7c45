"""Exception types raised across the package."""


class HHFLError(Exception):
    """Base class for all package errors."""


class InvalidSpec(HHFLError, ValueError):
    """A topology specification violates its invariants."""


class InfeasiblePartition(HHFLError, ValueError):
    """The dataset cannot satisfy a distribution case."""

    def __init__(self, message, client=None, label=None):
        super().__init__(message)
        self.client = client
        self.label = label


class NumericFailure(HHFLError, FloatingPointError):
    """A gradient or parameter became non-finite."""

    def __init__(self, message, step=None, client=None):
        super().__init__(message)
        self.step = step
        self.client = client


class InvalidConfig(HHFLError, ValueError):
    """An experiment configuration is malformed or inconsistent."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line


class IncompleteConstants(HHFLError, ValueError):
    pass


class InvalidBoundConfig(HHFLError, ValueError):
    pass


class InsufficientData(HHFLError, ValueError):
    pass


class NoConvergence(HHFLError, RuntimeError):
    def __init__(self, message, trace_name=None):
        super().__init__(message)
        self.trace_name = trace_name
