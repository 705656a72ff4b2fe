"""Exception types raised across the package."""


class SmtlError(Exception):
    """Base class for package errors."""


class ValidationError(SmtlError, ValueError):
    """Input violates a documented precondition."""


class DegenerateTaskError(ValidationError):
    """A task's labels cannot support the requested loss (e.g. no positives for F1)."""

    def __init__(self, message, task_name=None):
        super().__init__(message)
        self.task_name = task_name


class ModelFormatError(ValidationError):
    """A model file could not be parsed."""


class BudgetExceededError(SmtlError):
    """A brute-force oracle was asked for an instance beyond its enumeration budget."""


class NumericalError(SmtlError, ArithmeticError):
    """Non-finite arithmetic inside a solver."""


class DataFormatError(ValidationError):
    """A dataset file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}: " if line is None else f"{path}:{line}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message if where else message)
        self.path = path
        self.line = line
