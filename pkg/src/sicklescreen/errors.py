"""Exception hierarchy shared across the package."""


class ScreeningError(Exception):
    """Base class for all package errors."""


class PgmError(ScreeningError, ValueError):
    """Raised when a portable graymap cannot be parsed."""


class MalformedHeaderError(PgmError):
    pass


class UnsupportedMaxvalError(PgmError):
    pass


class TruncatedDataError(PgmError):
    pass


class DimensionOverflowError(PgmError):
    pass


class DimensionMismatchError(ScreeningError, ValueError):
    pass


class SingleClassError(ScreeningError, ValueError):
    """Training data holds fewer than two classes."""

    def __init__(self, msg="single-class dataset"):
        super().__init__(msg)


class NoMeasurableCellsError(ScreeningError):
    """No region survived the segmentation and shape filters."""

    def __init__(self, msg="no measurable cells"):
        super().__init__(msg)


class CanvasTooCrowdedError(ScreeningError):
    def __init__(self, msg="canvas too crowded"):
        super().__init__(msg)


class ModelFormatError(ScreeningError, ValueError):
    """A serialized model file is malformed."""


class ConfigError(ScreeningError, ValueError):
    pass
