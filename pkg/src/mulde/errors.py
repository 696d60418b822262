"""Exception types shared across the package.

Each class maps to one CLI exit code, so library errors surface as a
machine-parseable category on the command line.
"""


class MuldeError(Exception):
    """Base class for all package errors."""

    category = "error"
    exit_code = 1


class UsageError(MuldeError):
    """Bad arguments or preconditions violated by the caller."""

    category = "usage-error"
    exit_code = 2


class DimensionError(MuldeError):
    """Input shape does not match what a model or operation expects."""

    category = "dimension-error"
    exit_code = 4


class FormatError(MuldeError):
    """Malformed file content (bad magic, version, truncation)."""

    category = "format-error"
    exit_code = 3

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(MuldeError):
    """Non-finite value encountered during computation.

    ``layer`` identifies the offending network layer when known;
    ``last_net`` carries the last finite parameter state when training
    aborts mid-run.
    """

    category = "numeric-error"
    exit_code = 5

    def __init__(self, message, layer=None, last_net=None, history=None):
        super().__init__(message)
        self.layer = layer
        self.last_net = last_net
        self.history = history


class UndefinedMetric(MuldeError):
    """Metric has no defined value (e.g. AUC with single-class labels)."""

    category = "undefined-metric"
    exit_code = 2
