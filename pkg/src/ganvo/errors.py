"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError -> 2, ShapeError / NumericError -> 3.
"""


class GanvoError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GanvoError):
    """Invalid configuration value, file or command usage."""


class DataError(GanvoError):
    """Dataset problem: missing files, malformed records, bad layout."""


class ShapeError(GanvoError):
    """Tensor or matrix dimensions do not satisfy an operation's contract."""


class NumericError(GanvoError):
    """A computation produced or received non-finite or degenerate values."""


class NoValidOverlapError(NumericError):
    """Every pixel of a synthesized view fell outside the source image."""
