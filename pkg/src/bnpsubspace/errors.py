"""Exception types raised across the package."""


class SubspaceError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(SubspaceError, ValueError):
    """Array shapes or requested dimensions are inconsistent."""


class InfeasibleConstraintError(SubspaceError, ValueError):
    """An orthogonality constraint leaves no room for the requested frame."""


class InvalidInitialStateError(SubspaceError, ValueError):
    """A sampler was started from a state that violates its constraints."""


class NonUniqueMinimizerError(SubspaceError, ArithmeticError):
    """A risk minimizer is not unique (eigenvalue or argmin tie)."""


class MisconfiguredModelError(SubspaceError, ValueError):
    """The model state lacks components needed by the requested evaluation."""


class InvariantViolationError(SubspaceError, ArithmeticError):
    """A numerical invariant of the chain state was broken.

    Attributes
    ----------
    iteration : int or None
        MCMC iteration at which the violation was detected, when known.
    """

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration

    def __str__(self):
        msg = super().__str__()
        if self.iteration is not None:
            return f"iteration {self.iteration}: {msg}"
        return msg
