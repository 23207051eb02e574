"""Exception types shared across the package."""


class ISFError(Exception):
    """Base class for all package errors."""


class InvalidArgument(ISFError, ValueError):
    pass


class NumericError(ISFError, ArithmeticError):
    pass


class UndefinedSimilarity(ISFError, ValueError):
    pass


class InvalidCheckpoint(ISFError):
    pass


class CorruptDataset(ISFError):
    pass


class ConfigError(ISFError, ValueError):
    pass


class TrainingAborted(ISFError, RuntimeError):
    """A loss term went non-finite; ``report`` names the offending term(s)."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}
