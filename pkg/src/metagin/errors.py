"""Exception types shared across the package."""


class MetaGINError(Exception):
    """Base class for all package errors."""


class GraphError(MetaGINError, ValueError):
    """Malformed graph input (bad node ids, overlapping splits, ...)."""


class DataError(MetaGINError, ValueError):
    """A dataset bundle or label file could not be parsed or is inconsistent."""


class SamplingError(MetaGINError, ValueError):
    """Not enough classes or nodes to build the requested task."""


class DivergenceError(MetaGINError, ArithmeticError):
    """A loss or gradient became non-finite during optimization."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
