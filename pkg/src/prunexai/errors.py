"""Exception hierarchy shared by every stage of the package."""


class PruneXAIError(Exception):
    """Base class. ``stage`` names the pipeline stage that failed, if known."""

    exit_code = 2

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class DataError(PruneXAIError, ValueError):
    """Malformed input data: bad CSV, shape mismatch, empty split."""

    exit_code = 2


class NumericError(PruneXAIError, ArithmeticError):
    """A numerical routine produced non-finite values or could not be solved."""

    exit_code = 3


class ConfigError(PruneXAIError, ValueError):
    """Invalid configuration or CLI usage."""

    exit_code = 1
