"""Exception hierarchy shared by all phaseswap modules."""


class PhaseSwapError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(PhaseSwapError, ValueError):
    pass


class InvalidSignalError(PhaseSwapError, ValueError):
    pass


class IncompatibleSignalsError(PhaseSwapError, ValueError):
    pass


class NonRealResultError(PhaseSwapError, ArithmeticError):
    pass


class ShapeError(PhaseSwapError, ValueError):
    pass


class InsufficientDataError(PhaseSwapError, ValueError):
    pass


class ConfigError(PhaseSwapError, ValueError):
    pass


class EdfError(PhaseSwapError, ValueError):
    """Any failure to read or write an EDF file."""


class TruncatedFileError(EdfError):
    pass


class MalformedHeaderError(EdfError):
    pass


class DegenerateScalingError(EdfError):
    pass


class RangeError(EdfError):
    pass
