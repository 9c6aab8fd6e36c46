"""Exception hierarchy.

Each error class carries the process exit code the CLI maps it to:
1 for usage/configuration problems, 2 for data problems, 3 for numeric ones.
"""


class DpqhdError(Exception):
    exit_code = 1


class ConfigError(DpqhdError, ValueError):
    exit_code = 1


class UsageError(DpqhdError, ValueError):
    exit_code = 1


class DataError(DpqhdError):
    exit_code = 2


class ParseError(DataError, ValueError):
    """Malformed dataset or artifact file. The message names the offset or line."""


class TrainingError(DataError, ValueError):
    pass


class NumericError(DpqhdError, ValueError):
    exit_code = 3


class DimensionError(NumericError):
    pass


class DegenerateInputError(NumericError):
    pass


class RangeError(NumericError):
    pass
