"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError (and its
file-format subclasses) -> 2, anything else -> 3.
"""


class LidarBgError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(LidarBgError, ValueError):
    """Invalid parameters, sizes, or configuration."""


class DataError(LidarBgError, ValueError):
    """Invalid or inconsistent input data."""


class PcdFormatError(DataError):
    """Malformed or unsupported PCD file content."""


class CsvFormatError(DataError):
    """Malformed CSV point file content."""


class GdgFormatError(DataError):
    """Malformed or inconsistent GDG1 file content."""
