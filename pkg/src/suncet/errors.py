"""Exception hierarchy. Each family maps to a CLI exit code."""


class SuncetError(Exception):
    exit_code = 1


class ShapeError(SuncetError, ValueError):
    exit_code = 3


class ConfigError(SuncetError, ValueError):
    exit_code = 2


class DataError(SuncetError, ValueError):
    exit_code = 3


class FormatError(DataError):
    pass


class LengthError(DataError):
    pass


class SamplingError(DataError):
    pass


class EmptySupervisionError(DataError):
    pass


class DegenerateBatchError(DataError):
    pass


class StateError(SuncetError, RuntimeError):
    exit_code = 1


class DivergenceError(SuncetError, FloatingPointError):
    exit_code = 4


class AccountingError(SuncetError, OverflowError):
    exit_code = 1
