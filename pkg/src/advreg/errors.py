class AdvRegError(Exception):
    """Base class for all errors raised by advreg."""


class ContractError(AdvRegError, ValueError):
    """Inputs violate a documented precondition (shapes, empty sets, ranges)."""


class DomainError(AdvRegError, ValueError):
    """A function was evaluated outside its domain, e.g. a zero-norm row."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class SolverError(AdvRegError, RuntimeError):
    """A numerical solve failed (singular system, non-finite residual)."""


class DataLoadError(AdvRegError):
    """A dataset file could not be read or does not match its schema."""
