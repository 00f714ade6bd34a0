"""
Exception hierarchy for the I-divergence NMF toolkit.

Every error carries the process exit code the CLI reports for it. None of
these derive from ValueError, so they pass through pydantic validators
unchanged.
"""

from typing import Optional, Tuple


class NMFError(Exception):
    """Base class for all toolkit errors."""

    exit_code: int = 1


class UsageError(NMFError):
    """Caller passed arguments that do not fit together (shapes, rank, size guard)."""

    exit_code = 2


class PreconditionError(UsageError):
    """An operation's documented precondition does not hold for the input."""


class DataError(NMFError):
    """Input data violates a type invariant."""

    exit_code = 3

    def __init__(self, message: str, code: str = "invalid_data"):
        super().__init__(message)
        self.code = code


class DomainError(DataError):
    """Entries outside the nonnegative domain, or an all-zero data matrix."""

    def __init__(self, message: str, code: str = "negative_entry"):
        super().__init__(message, code)


class DegenerateInputError(DataError):
    """A factor has a zero row where a positive row sum is required."""

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message, "zero_row")
        self.row = row


class MatrixFileError(DataError):
    """A matrix file could not be read into a valid matrix."""

    def __init__(self, message: str, code: str, path: Optional[str] = None):
        super().__init__(message, code)
        self.path = path


class NumericalError(NMFError):
    """The iteration hit a cell or component where its formulas divide by zero."""

    exit_code = 4


class SingularityError(NumericalError):
    """V(i, j) > 0 meets a model value (WH)(i, j) = 0."""

    def __init__(self, cell: Tuple[int, int]):
        i, j = cell
        super().__init__(f"Singular cell ({i}, {j}): data is positive but the model value is 0")
        self.cell = (i, j)


class DegenerateLatentError(NumericalError):
    """A latent component carries zero total mass."""

    def __init__(self, latent: int):
        super().__init__(f"Latent component {latent} has zero total mass")
        self.latent = latent
