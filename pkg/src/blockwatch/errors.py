"""Exception hierarchy.  ``exit_code`` is what the command line returns."""


class BlockwatchError(Exception):
    exit_code = 1


class ConfigError(BlockwatchError, ValueError):
    exit_code = 2


class DataError(BlockwatchError, ValueError):
    """Bad or insufficient data (too few rows, non-finite values, ...)."""
    exit_code = 3


class SchemaError(DataError):
    """Column layout does not match what a fitted object expects."""


class NumericError(BlockwatchError, ArithmeticError):
    exit_code = 4

    def __init__(self, message: str, parameter: str | None = None,
                 epoch: int | None = None):
        super().__init__(message)
        self.parameter = parameter
        self.epoch = epoch


class TrainingError(NumericError):
    pass


class StateError(NumericError):
    """CUSUM recursion state became invalid."""
