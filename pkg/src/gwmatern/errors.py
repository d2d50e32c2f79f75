"""Exception hierarchy shared by all modules."""


class GWMaternError(Exception):
    """Base class for errors raised by this package."""


class DomainError(GWMaternError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConvergenceError(GWMaternError, ArithmeticError):
    """A series or iteration did not meet its tolerance within the budget."""


class PrecisionLossError(GWMaternError, ArithmeticError):
    """The requested evaluation would lose too many significant digits."""


class BracketError(GWMaternError, ArithmeticError):
    """A root could not be bracketed."""


class DuplicateLocationError(GWMaternError, ValueError):
    """Two locations in a point set coincide exactly."""

    def __init__(self, i, j):
        super().__init__(f"locations {i} and {j} coincide")
        self.pair = (int(i), int(j))


class NotPositiveDefiniteError(GWMaternError, ArithmeticError):
    """Cholesky factorization met a non-positive pivot.

    Attributes
    ----------
    index : int
        Row of the failing pivot, in the ordering of the input matrix.
    """

    def __init__(self, index, pivot=None):
        msg = f"matrix is not positive definite (pivot {index}"
        msg += ")" if pivot is None else f" = {pivot:.3e})"
        super().__init__(msg)
        self.index = int(index)
        self.pivot = pivot


class FitError(GWMaternError, RuntimeError):
    """Maximum-likelihood fitting failed."""
