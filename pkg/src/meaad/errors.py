"""Exception hierarchy. Each family carries the CLI exit code it maps to."""


class MeaadError(Exception):
    exit_code = 1


class ConfigError(MeaadError, ValueError):
    exit_code = 2


class DataError(MeaadError, ValueError):
    exit_code = 3


class NumericError(MeaadError, ArithmeticError):
    exit_code = 4


class InvalidConfig(ConfigError):
    pass


class NotTrained(ConfigError):
    pass


class ZeroVector(DataError):
    pass


class NonFinite(NumericError):
    pass


class DimensionMismatch(DataError):
    pass


class InsufficientGallery(DataError):
    pass


class MismatchedSupportSizes(DataError):
    pass


class SingleExpert(DataError):
    pass


class SingleClassDataset(DataError):
    pass


# metrics raises the same condition under its own name
SingleClass = SingleClassDataset


class LengthMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class FormatError(DataError):
    pass
