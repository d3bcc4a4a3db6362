class HarmonicShootError(Exception):
    """Base error. ``exit_code`` is the CLI status the error maps to."""

    exit_code = 3


class DomainError(HarmonicShootError, ValueError):
    """Input outside the domain of an operation (bad pair, bad argument, bad config)."""

    exit_code = 2


class NumericalError(HarmonicShootError, RuntimeError):
    exit_code = 3


class SeriesError(NumericalError):
    pass


class StepFailure(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class NoTransition(NumericalError):
    pass


class UndefinedLift(NumericalError):
    pass


class NoSettle(NumericalError):
    pass


class ConstantCheckError(NumericalError):
    pass
