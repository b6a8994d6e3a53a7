"""Exception hierarchy shared across the package."""


class ViewAdaptError(Exception):
    """Base class for all package errors."""


class DataError(ViewAdaptError, ValueError):
    """Bad input data (files, arrays, configuration values)."""


class GeometryError(DataError):
    pass


class NonInvertible(GeometryError):
    pass


class PointAtInfinity(GeometryError):
    pass


class DegenerateAngle(GeometryError):
    pass


class MalformedFile(DataError):
    pass


class ImageTooSmall(DataError):
    pass


class GridOutOfBounds(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class DegenerateData(DataError):
    pass


class NonPositiveInput(DataError):
    pass


class EmptyWindowSet(DataError):
    pass


class MissingCacheEntry(DataError, KeyError):
    pass


class EmptyCurve(DataError):
    pass


class InsufficientDiversity(DataError):
    pass


class ConfigError(DataError):
    pass
