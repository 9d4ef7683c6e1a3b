"""Exception and warning types shared across the package."""


class OperonError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(OperonError, ValueError):
    pass


class NotPositiveDefinite(OperonError, ArithmeticError):
    pass


class AllocationLimit(OperonError, MemoryError):
    pass


class UnsupportedFamily(OperonError, ValueError):
    pass


class StepOutsideDomain(OperonError, ValueError):
    pass


class UnstableStep(OperonError, ArithmeticError):
    pass


class SolverSingular(OperonError, ArithmeticError):
    pass


class DataError(OperonError):
    """Raised for unreadable or inconsistent files."""


class CorruptManifest(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class TrainingAborted(OperonError):
    """Training stopped on a numerical failure; ``history`` holds the epochs run so far."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class RankDeficient(UserWarning):
    pass


class DegenerateGradient(UserWarning):
    pass


class ZeroNormTruth(UserWarning):
    pass
