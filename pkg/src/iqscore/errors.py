"""Exception types shared across the package.

Every error carries an ``exit_code`` used by the CLI: 2 for input/format
problems, 3 for computation/validation problems.
"""

from __future__ import annotations


class IqScoreError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 3


class FormatError(IqScoreError):
    """A file or payload does not conform to its documented format."""

    exit_code = 2

    def __init__(self, reason: str, *, path=None, offset=None, line=None):
        self.path = str(path) if path is not None else None
        self.offset = offset
        self.line = line
        where = []
        if self.path is not None:
            where.append(self.path)
        if offset is not None:
            where.append(f"offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{reason}{suffix}")


class NonFiniteValue(FormatError):
    """A NaN or infinity was found in an embedding matrix."""

    def __init__(self, row: int, col: int, path=None):
        self.row = row
        self.col = col
        super().__init__(f"non-finite value at row {row}, column {col}", path=path)


class LabelCountMismatch(FormatError):
    """The number of labels does not match the number of embedding rows."""

    def __init__(self, expected: int, got: int, path=None):
        self.expected = expected
        self.got = got
        super().__init__(f"expected {expected} labels, got {got}", path=path)


class ZeroNormRow(IqScoreError):
    """A row with (near-)zero norm cannot be normalized."""

    def __init__(self, row: int):
        self.row = row
        super().__init__(f"row {row} has norm <= 1e-12 and cannot be normalized")


class NotNormalized(IqScoreError):
    """An operation required unit-normalized embeddings."""


class NoEligibleIdentity(IqScoreError):
    """No identity satisfies the minimum-size requirement for sampling."""


class SingleIdentity(IqScoreError):
    """Label flipping needs at least two distinct identities."""


class EmptyPool(IqScoreError):
    """Neighbor retrieval needs at least two rows."""


class LengthMismatch(IqScoreError):
    """Two paired vectors have different lengths."""


class EmptyVector(IqScoreError):
    """An aggregate was requested over an empty vector."""


class ConvergenceFailure(IqScoreError):
    """The eigensolver failed to converge or produced invalid output."""


class AllZeroSpectrum(IqScoreError):
    """Spectral statistics are undefined for an all-zero spectrum."""


class DegenerateCap(IqScoreError):
    """Normalization cap Q = min(n, d) must be at least 2."""


class ZeroVariance(IqScoreError):
    """Correlation is undefined when one input has zero variance."""


class WeightError(IqScoreError):
    """Fusion weights must be non-negative and sum to 1."""
