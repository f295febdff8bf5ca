__all__ = ('IsacError', 'ConfigError', 'DataError', 'DegenerateSignalError',
           'GeometryError', 'OutOfRangeError', 'FormatError',
           'MissingCheckpointError', 'NumericError', 'RankDeficiencyError',
           'DivergenceError')


class IsacError(Exception):
    "Base class of every error raised by `isac_detect`"


class ConfigError(IsacError, ValueError):
    "Invalid configuration or incompatible shapes. CLI exit code 2."


class DataError(IsacError, ValueError):
    "Invalid or inconsistent input data. CLI exit code 3."


class DegenerateSignalError(DataError):
    pass


class GeometryError(DataError):
    pass


class OutOfRangeError(DataError):
    pass


class FormatError(DataError):
    pass


class MissingCheckpointError(DataError):
    pass


class NumericError(IsacError, ArithmeticError):
    "Numerical failure. CLI exit code 4."


class RankDeficiencyError(NumericError):
    """Least-squares Gram matrix too ill-conditioned to invert.

    Attributes:
        pair: indices (i, j) of the two most coherent atoms
        cond: condition number of the Gram matrix
    """
    def __init__(self, message, pair, cond):
        super().__init__(message)
        self.pair = pair
        self.cond = cond


class DivergenceError(NumericError):
    pass
