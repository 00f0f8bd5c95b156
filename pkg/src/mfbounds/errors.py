"""Exception types raised across the package."""


class BoundsError(ValueError):
    """Base class for all package errors."""


# core
class EmptyTimes(BoundsError):
    pass


class HistoryOutsideDomain(BoundsError):
    pass


class MismatchedLengths(BoundsError):
    pass


class UnboundedPayoffOnUnboundedMesh(BoundsError):
    pass


class DegenerateRange(BoundsError):
    pass


class PointOutsideHull(BoundsError):
    pass


class BoundaryIndex(BoundsError):
    pass


# payoffs
class DomainError(BoundsError):
    pass


class TableMeshMismatch(BoundsError):
    pass


# market data
class NegativeInput(BoundsError):
    pass


class ParseError(BoundsError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class CrossedQuote(ParseError):
    pass


# lp builder / solver
class HistoryOutsideHull(BoundsError):
    pass


class OverflowGuard(BoundsError):
    pass


class WellFormednessError(BoundsError):
    pass


# oracle / report
class LengthMismatch(BoundsError):
    pass


class MeshMismatch(BoundsError):
    pass


class TooManyPaths(BoundsError):
    pass


class Infeasible(BoundsError):
    pass


class StatusNotOptimal(BoundsError):
    pass


class DegenerateDuals(BoundsError):
    pass


class OffGridHistory(BoundsError):
    """Measure extraction needs the known history on mesh nodes."""


class MeshOutsideDomain(BoundsError):
    """A mesh node or strike lies outside the state domain or mesh hull."""
