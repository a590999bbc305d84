"""Exception hierarchy shared by all modules."""


class AMDError(Exception):
    """Base class for errors raised by :mod:`amdgp`."""


class InvalidArgumentError(AMDError, ValueError):
    """An argument violates a documented precondition."""


class NumericalError(AMDError, ArithmeticError):
    """A matrix could not be factorized even after jitter escalation."""

    def __init__(self, message, jitter=None):
        super().__init__(message)
        self.jitter = jitter


class OptimizationError(AMDError, RuntimeError):
    """Every restart of a hyperparameter optimization failed."""
