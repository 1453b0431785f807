"""Exception hierarchy.

The three top-level families map onto CLI exit codes: configuration
problems (2), bad input data (3) and numerical failures (4).
"""


class HetRadarError(Exception):
    exit_code = 1


class ConfigError(HetRadarError, ValueError):
    exit_code = 2


class DataError(HetRadarError, ValueError):
    exit_code = 3


class ScanParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ScanValidationError(DataError):
    pass


class LengthMismatchError(DataError):
    pass


class ShapeError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class NumericalError(HetRadarError, ArithmeticError):
    exit_code = 4


class DegenerateGeometryError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    """Iterative solver gave up; ``last`` carries the final iterate."""

    def __init__(self, message, last=None, error=None):
        super().__init__(message)
        self.last = last
        self.error = error
