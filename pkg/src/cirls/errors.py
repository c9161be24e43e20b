"""Exception hierarchy for the package."""


class CirlsError(Exception):
    """Base class for all errors raised by cirls."""


class InputError(CirlsError, ValueError):
    """Bad user input: shapes, bounds, indices, data files."""


class NumericalError(CirlsError, ArithmeticError):
    """A numerical procedure could not produce a valid answer."""


# constraints
class DimensionMismatch(InputError):
    pass


class RankDeficientConstraints(InputError):
    pass


class InvalidBounds(InputError):
    pass


class ZeroRow(InputError):
    pass


class UnboundedRow(InputError):
    pass


class IndexOutOfRange(InputError):
    pass


class TooFewIndices(InputError):
    pass


class RunTooShort(InputError):
    pass


class TooManyConstraints(InputError):
    """More constraints than coefficients; inference needs m <= p."""


# families
class SupportViolation(InputError):
    pass


class NumericOverflow(NumericalError):
    pass


class NonPositiveDf(InputError):
    pass


# qp
class Infeasible(NumericalError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class MaxIterationsExceeded(NumericalError):
    pass


# fitting
class DidNotConverge(NumericalError):
    pass


class NonFiniteDeviance(NumericalError):
    pass


class RankDeficientDesign(NumericalError):
    pass


# inference
class SingularInformation(NumericalError):
    pass


class DegenerateTruncation(NumericalError):
    def __init__(self, message, log_mass=None):
        super().__init__(message)
        self.log_mass = log_mass


class EmptyInterval(InputError):
    pass


class TooFewDraws(InputError):
    pass


# datasets
class MissingDataset(InputError):
    pass


# simulation
class TooManyFailures(NumericalError):
    """More than the tolerated share of replicates failed to fit."""
