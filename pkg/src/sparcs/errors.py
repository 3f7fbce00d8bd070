"""Exception hierarchy.

Errors fall into three families that the CLI maps to exit codes:
``DataError`` (bad inputs, exit 2), ``NumericalError`` (ill-posed numerics,
exit 3) and ``UsageError`` / ``ConfigError`` (exit 1).
"""


class SparcsError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(SparcsError):
    pass


class ConfigError(UsageError, ValueError):
    pass


class DataError(SparcsError, ValueError):
    pass


class NumericalError(SparcsError, ArithmeticError):
    pass


class DomainError(DataError):
    """Argument outside the mathematical domain of a function."""


class TooFewSamples(DataError):
    def __init__(self, n, minimum=3):
        super().__init__(f"need at least {minimum} samples, got n={n}")
        self.n = n


class ZeroVarianceColumn(DataError):
    def __init__(self, index):
        super().__init__(f"column {index} has zero sample variance")
        self.index = index


class ZeroVarianceResponse(DataError):
    def __init__(self):
        super().__init__("response has zero sample variance")


class DimensionMismatch(DataError):
    pass


class SupportMismatch(DataError):
    pass


class InvalidL(DataError):
    pass


class InvalidK(DataError):
    pass


class InvalidPhi(DataError):
    pass


class InvalidDof(DataError):
    pass


class InvalidParams(DataError):
    pass


class SingularGram(NumericalError):
    pass


class SingularRestrictedCovariance(NumericalError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class ConvergenceFailure(NumericalError):
    pass


class NonConvergence(ConvergenceFailure):
    def __init__(self, max_iter, gap=None):
        msg = f"no convergence after {max_iter} iterations"
        if gap is not None:
            msg += f" (last change {gap:.3g})"
        super().__init__(msg)
        self.max_iter = max_iter


class DegenerateVariance(NumericalError):
    pass
