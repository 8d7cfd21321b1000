"""Exception hierarchy shared across the package."""


class QuasiBayesError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(QuasiBayesError, ValueError):
    pass


class CriterionEvaluationError(QuasiBayesError):
    """A criterion returned NaN or failed internally at ``theta``."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = None if theta is None else tuple(float(t) for t in theta)

    def __str__(self):
        base = super().__str__()
        if self.theta is None:
            return base
        return f"{base} (theta={list(self.theta)})"


class SingularWeightingError(CriterionEvaluationError):
    pass


class InnerSolveError(CriterionEvaluationError):
    pass


class DomainError(QuasiBayesError, ValueError):
    pass


class SchemaError(QuasiBayesError, ValueError):
    """Missing column or unparseable cell in tabular input."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DataValidationError(QuasiBayesError, ValueError):
    pass


class DataTooShortError(DataValidationError):
    pass


class InvalidStateError(QuasiBayesError):
    pass


class StartupError(QuasiBayesError):
    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta
