"""Exception hierarchy shared by every trendkit module."""


class TrendkitError(Exception):
    """Base class for analysis errors (CLI exit code 2)."""


class DesignError(TrendkitError, ValueError):
    pass


class SingularDesignError(TrendkitError, ValueError):
    def __init__(self, message: str, column: int | str | None = None):
        super().__init__(message)
        self.column = column


class DegenerateLeverageError(TrendkitError, ValueError):
    pass


class ConvergenceError(TrendkitError, RuntimeError):
    def __init__(self, message: str, last_coef=None, iterations: int | None = None):
        super().__init__(message)
        self.last_coef = last_coef
        self.iterations = iterations


class DegenerateModelError(TrendkitError, ValueError):
    def __init__(self, message: str, label: str | None = None):
        super().__init__(message)
        self.label = label


class AlignmentError(TrendkitError, ValueError):
    pass


class ZeroVarianceError(TrendkitError, ValueError):
    pass


class MvtAccuracyError(TrendkitError, RuntimeError):
    """Requested accuracy not reached within the point budget."""

    def __init__(self, message: str, estimate: float, error: float):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class DataError(TrendkitError, ValueError):
    pass


class IngestionError(TrendkitError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
