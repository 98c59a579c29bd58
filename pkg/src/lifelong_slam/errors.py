"""Exception types shared across the package."""


class LifelongSlamError(Exception):
    """Base class for all package-specific errors."""


class InvalidInformationError(LifelongSlamError):
    """An information matrix is not symmetric positive-definite."""


class GraphIntegrityError(LifelongSlamError):
    """A graph mutation would leave a dangling or inconsistent reference."""


class DuplicateIdError(LifelongSlamError):
    """A node, submap or constraint id is already present."""


class UnknownVariableError(LifelongSlamError, KeyError):
    """A node or submap id is not present in the graph."""


class RankDeficiencyError(LifelongSlamError):
    """The normal equations are singular; some connected component has no prior."""


class NumericalFailureError(LifelongSlamError):
    """A linear solve failed even after damping growth."""


class SingularMarginalizationError(LifelongSlamError):
    """The block to be marginalized out is numerically singular."""


class LifecycleError(LifelongSlamError):
    """An operation is not allowed in the submap's current lifecycle state."""


class ContractError(LifelongSlamError, ValueError):
    """Arguments violate an operation's documented precondition."""


class NotInitializedError(LifelongSlamError):
    """Global localization has no submaps to match against."""


class UndefinedMetricError(LifelongSlamError):
    """A metric is undefined for the given (empty or degenerate) input."""


class LogParseError(LifelongSlamError):
    """A sensor log line could not be parsed."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class LogOrderingError(LifelongSlamError):
    """Sensor records are not ordered by timestamp."""
