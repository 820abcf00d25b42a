"""Exception types shared across the package."""

from __future__ import annotations


class FedSVDError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(FedSVDError, ValueError):
    pass


class ZeroColumn(FedSVDError, ValueError):
    pass


class NonFiniteValue(FedSVDError, ValueError):
    pass


class RankDeficient(FedSVDError, ArithmeticError):
    """Raised when a set of vectors is numerically linearly dependent.

    ``column`` is the 0-based index of the first offending column (or, for
    rank checks on a spectrum, the number of admissible values found).
    """

    def __init__(self, column: int, message: str | None = None):
        self.column = column
        super().__init__(message or f"rank deficient at column {column}")


class NotConverged(UserWarning):
    """Emitted when an iteration hits ``max_iterations`` before converging."""


class TooManySites(FedSVDError, ValueError):
    pass


class TransportError(FedSVDError, RuntimeError):
    pass


# -- file / wire decoding -----------------------------------------------------


class DecodeError(FedSVDError, ValueError):
    """Base for every structured failure when parsing bytes or text."""


class ParseError(DecodeError):
    def __init__(self, location: int, message: str):
        self.location = location
        super().__init__(f"{message} (at {location})")


class InconsistentRowLength(DecodeError):
    def __init__(self, line: int, expected: int, got: int):
        self.line = line
        self.expected = expected
        self.got = got
        super().__init__(f"line {line}: expected {expected} values, got {got}")


class BadMagic(DecodeError):
    pass


class UnsupportedVersion(DecodeError):
    pass


class TruncatedPayload(DecodeError):
    pass


class TrailingBytes(DecodeError):
    pass


class UnknownKind(DecodeError):
    pass


class NonFinitePayload(DecodeError):
    pass


# -- attack -------------------------------------------------------------------


class InsufficientRank(FedSVDError, ArithmeticError):
    """The transcript ran out before the linear system became fully determined."""

    def __init__(self, columns_used: int, required: int):
        self.columns_used = columns_used
        self.required = required
        super().__init__(
            f"only {columns_used} of {required} independent equations available"
        )


class NumericallySingular(FedSVDError, ArithmeticError):
    pass


class ZeroVariance(FedSVDError, ValueError):
    pass


class ConfigError(FedSVDError, ValueError):
    pass
