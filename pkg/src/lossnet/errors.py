"""Exception hierarchy.

``PreconditionError`` subclasses signal inputs a method cannot accept (the CLI
maps them to exit code 2); ``MethodError`` subclasses signal a numerical
procedure that failed on valid input (exit code 3).
"""
from __future__ import annotations


class LossNetError(Exception):
    """Base class for every error raised by this package."""


class PreconditionError(LossNetError):
    pass


class MethodError(LossNetError):
    pass


class ValidationError(PreconditionError):
    """A network or policy definition violates one or more invariants.

    ``issues`` holds ``(code, message)`` pairs, one per violated invariant.
    """

    def __init__(self, issues):
        self.issues = list(issues)
        text = "; ".join(f"{code}: {msg}" for code, msg in self.issues)
        super().__init__(text)

    @property
    def codes(self):
        return [code for code, _ in self.issues]


class DimensionMismatch(ValidationError):
    def __init__(self, message):
        super().__init__([("DimensionMismatch", message)])


class StateSpaceTooLarge(PreconditionError):
    pass


class NotZeroOne(PreconditionError):
    pass


class InvalidHorizon(PreconditionError):
    pass


class InconsistentRecursion(MethodError):
    pass


class NotIrreducible(MethodError):
    def __init__(self, message, reachable=None):
        super().__init__(message)
        self.reachable = reachable


class NoConvergence(MethodError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class TruncationFailure(MethodError):
    pass
