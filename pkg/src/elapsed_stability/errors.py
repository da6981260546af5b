"""Exception hierarchy shared by all modules."""


class ElapsedStabilityError(Exception):
    """Base class for errors raised by this package."""


class DomainError(ElapsedStabilityError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class ConfigurationError(ElapsedStabilityError, ValueError):
    """A model or run configuration is incomplete or inconsistent."""


class NumericalError(ElapsedStabilityError, ArithmeticError):
    """A computation produced a non-finite or otherwise unusable result."""


class InconsistencyError(NumericalError):
    """Two quantities that must agree by construction do not."""


class StepTooLargeError(NumericalError):
    """The time step makes an implicit update singular."""


class NearPoleError(NumericalError):
    """Evaluation point is (numerically) a pole of the expression."""


class IndeterminateError(NumericalError):
    """A winding number could not be resolved to an integer."""


class ConvergenceError(NumericalError):
    """An iteration failed to converge."""
