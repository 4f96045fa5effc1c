"""
Error hierarchy shared by services and commands.

Commands map ``USAGE_ERRORS`` to exit code 2, everything else to 1.
"""


class TrifuseError(Exception):
    """Base class for every error raised on purpose by this package"""


class ConfigError(TrifuseError):
    """Invalid or inconsistent configuration"""


class CheckpointError(ConfigError):
    """Checkpoint or model file that does not match what the caller expects"""


class ArgumentError(TrifuseError, ValueError):
    """Operation called with an argument outside its domain"""


class ShapeError(TrifuseError, ValueError):
    """Array shapes that cannot be combined"""


class ImageFormatError(TrifuseError):
    """Image file in a format we do not read or write"""


class EmptyDatasetError(TrifuseError):
    """Dataset directory or manifest without usable images"""


class AutodiffError(TrifuseError, RuntimeError):
    """Misuse of the computation graph"""


class NumericalError(TrifuseError, ArithmeticError):
    """Non-finite values where finite ones are required"""


class FitError(TrifuseError):
    """Statistical model could not be fitted from the given data"""


USAGE_ERRORS = (
    ConfigError,
    ArgumentError,
    EmptyDatasetError,
    ImageFormatError,
    ShapeError,
    FitError,
    FileNotFoundError,
    NotADirectoryError,
)
