"""Exception hierarchy shared by all modules.

Numeric failures (small divisors, stalled iterations) derive from
``NumericError`` so the command line can map them to one exit code.
"""


class ResonantWaveError(Exception):
    """Base class for every error raised by the package."""


class DomainError(ResonantWaveError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class ParityError(ResonantWaveError, ValueError):
    """A series does not have the parity an operator requires."""


class PreconditionError(ResonantWaveError, ValueError):
    """A documented precondition on the input does not hold."""


class BudgetError(ResonantWaveError, ValueError):
    """The requested enumeration or expansion exceeds the configured budget."""


class NumericError(ResonantWaveError, ArithmeticError):
    """Base class for failures of a numerical procedure."""


class NonConvergenceError(NumericError):
    """An iteration failed to reach its tolerance."""


class RootNotBracketedError(NumericError):
    """The residual does not change sign on the search interval."""


class SmallDivisorError(NumericError):
    """A propagator denominator fell below the configured floor."""

    def __init__(self, message, n=None, m=None, value=None):
        super().__init__(message)
        self.n = n
        self.m = m
        self.value = value


class ResidualTooLargeError(NumericError):
    """A consistency residual exceeds its tolerance."""


class InconsistencyError(NumericError):
    """Two independent evaluations of the same quantity disagree."""


class MelnikovViolationError(NumericError):
    """A frequency table violates the Mel'nikov conditions."""

    def __init__(self, message, generation=None, worst=None):
        super().__init__(message)
        self.generation = generation
        self.worst = worst
