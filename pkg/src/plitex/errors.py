"""Shared exception types.

Data-shaped failures (bad rasters, exhausted samplers, malformed files) derive
from DataError so the CLI can map them to a common exit code.
"""


class PlitexError(Exception):
    pass


class DataError(PlitexError):
    """Invalid or inconsistent input data."""


class ShapeMismatch(DataError):
    pass


class SingularMatrix(DataError):
    pass


class EmptyForeground(DataError):
    pass


class OutOfVolume(DataError):
    """Positive-pair sampling left the volume or hit background too often."""


class OutOfBounds(DataError):
    pass


class SectionSmallerThanTile(DataError):
    pass


class OverlappingPrimitives(DataError):
    pass


class FormatError(DataError):
    """Malformed container or manifest file."""
