"""Exception types shared across the package."""


class IsingError(Exception):
    """Base class for all package errors."""


class DomainError(IsingError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class DimensionMismatch(IsingError, ValueError):
    pass


class SpecError(IsingError, ValueError):
    """Invalid model specification (proportions, probabilities, sizes)."""


class SolverError(IsingError, RuntimeError):
    pass


class ParseError(IsingError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NonExistenceError(IsingError):
    """The maximum-likelihood equation has no finite root.

    ``estimate`` carries the signed infinite limit the estimator tends to.
    """

    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate
