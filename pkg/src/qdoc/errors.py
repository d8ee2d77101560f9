class QdocError(Exception):
    """Base class for all errors raised by this package."""


class NumericalError(QdocError, ArithmeticError):
    """A discretization or linear solve produced an invalid result."""


class SpectralRadiusError(NumericalError):
    """The pre-change kernel is not a strict contraction."""


class BracketError(NumericalError):
    """Threshold search could not bracket the target run length."""

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class CensoredRunError(QdocError, RuntimeError):
    """A simulated run hit the step cap before stopping."""

    def __init__(self, message, censored=0, estimate=None):
        super().__init__(message)
        self.censored = censored
        self.estimate = estimate
