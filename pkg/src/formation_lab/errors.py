"""Exception hierarchy shared by all formation-lab modules.

Errors fall into three families that the CLI maps onto exit codes:
configuration problems (exit 2), data problems (exit 3), and numerical
failures (exit 4).
"""


class FormationLabError(Exception):
    """Base class for all package errors."""


class ConfigError(FormationLabError):
    """Invalid or inconsistent run configuration."""


class DataError(FormationLabError):
    """Problems with input data: missing files, malformed rows, bad shapes."""


class NumericalError(FormationLabError):
    """A numerical routine could not produce a valid result."""


# --- data errors -----------------------------------------------------------

class MissingCell(DataError):
    """A manifest row references a cell file that does not exist."""


class ParseError(DataError):
    """A CSV row could not be parsed; carries the offending line number."""

    def __init__(self, message, path=None, line=None):
        super().__init__(message)
        self.path = path
        self.line = line


class ValidationError(DataError):
    """A record violates a documented invariant."""


class StepNotFound(DataError):
    """A step locator resolved to an empty sample range."""


class NonMonotoneAbscissa(DataError):
    """The interpolation abscissa is not monotone after deduplication."""


class EmptyInput(DataError):
    """An operation received an empty sequence."""


class ShapeError(DataError):
    """Array dimensions do not match the operation's contract."""


class DegenerateColumn(DataError):
    """A statistic is undefined because a column has zero variance."""


# --- numerical errors ------------------------------------------------------

class DegenerateScale(NumericalError):
    """Shared standardization scale is zero (all-constant matrix)."""


class NotConverged(NumericalError):
    """An iterative solver hit its iteration cap without converging."""


class DegenerateDenominator(NumericalError):
    """A ratio metric has an identically zero denominator."""


class NoFeasibleLambda(NumericalError):
    """No penalty weight satisfies all selection constraints."""


class MAPEUndefined(NumericalError):
    """MAPE requested against a target containing zeros."""


class DomainError(NumericalError):
    """A function was evaluated outside its mathematical domain."""


class RankDeficient(NumericalError):
    """A regression design matrix is rank deficient."""


class RootNotBracketed(NumericalError):
    """Bracket expansion failed to enclose a sign change."""


class StepSizeError(NumericalError):
    """An explicit time step pushed a state variable out of bounds."""


class WindowError(NumericalError):
    """A smoothing window is larger than the data it is applied to."""


class TestUndefined(NumericalError):
    """A statistical test is undefined for the given inputs."""
