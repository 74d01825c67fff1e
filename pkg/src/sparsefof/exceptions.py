"""Exception hierarchy shared by every module of the package."""


class SparseFofError(Exception):
    """Base class for all package errors."""


class DegenerateVariance(SparseFofError, ValueError):
    """A grid coordinate has (numerically) zero pointwise standard deviation."""


class RankDeficient(SparseFofError, ValueError):
    """Too few positive eigenvalues to build the requested basis."""


class GridMismatch(SparseFofError, ValueError):
    """Curve sets that must share a grid do not."""


class DimensionMismatch(SparseFofError, ValueError):
    pass


class FactorizationFailure(SparseFofError, ArithmeticError):
    """A matrix that should be positive definite could not be factorized."""


class MaxIterations(SparseFofError, RuntimeError):
    """The solver hit its iteration cap.

    The last iterate and the diagnostics are carried on the exception so
    that callers (e.g. a regularization path) can keep going.
    """

    def __init__(self, message, state=None, diagnostics=None):
        super().__init__(message)
        self.state = state
        self.diagnostics = diagnostics


class DegenerateDof(SparseFofError, ValueError):
    """Effective degrees of freedom exhaust the sample size."""


class ZeroBlock(SparseFofError, ValueError):
    """A selected coefficient block has zero norm, so its weight is undefined."""


class SoftDegenerate(SparseFofError, ValueError):
    """Soft adaptive weights collapse because the block norms have zero spread."""


class EmptyInitialSelection(SparseFofError, ValueError):
    """The unweighted path selected no block, so no adaptive step is possible."""


class UnsupportedSmoothness(SparseFofError, ValueError):
    pass
