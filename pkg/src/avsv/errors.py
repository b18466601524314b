"""Exception hierarchy shared by every module.

Each error carries the process exit code the command-line front end uses.
"""


class AVSVError(Exception):
    exit_code = 1


class ConfigError(AVSVError, ValueError):
    exit_code = 2


class DimensionError(AVSVError, ValueError):
    exit_code = 2


class DataError(AVSVError):
    exit_code = 3


class FormatError(DataError):
    """Base class for problems reading one of the binary file formats."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class CapabilityError(AVSVError):
    exit_code = 4


class TopologyMismatchError(CapabilityError):
    pass


class NumericalError(AVSVError, FloatingPointError):
    exit_code = 5


class TapeError(AVSVError, RuntimeError):
    pass
