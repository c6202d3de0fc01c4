"""Exception hierarchy shared by the library and the command line.

The CLI maps each class to an exit code: ``ConfigError`` -> 2,
``DataError`` -> 3, ``NumericError`` -> 4.
"""


class DifmError(Exception):
    exit_code = 1


class ConfigError(DifmError, ValueError):
    exit_code = 2


class DataError(DifmError, ValueError):
    exit_code = 3


class SchemaError(DataError):
    pass


class MetricUndefinedError(DataError):
    pass


class NumericError(DifmError, ArithmeticError):
    exit_code = 4
