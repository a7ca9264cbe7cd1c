"""Exception hierarchy shared across the package."""


class AEError(Exception):
    """Base class for every error raised by this package."""


class ZeroVector(AEError, ValueError):
    pass


class LengthMismatch(AEError, ValueError):
    pass


class DimensionMismatch(AEError, ValueError):
    pass


class ShapeMismatch(AEError, ValueError):
    pass


class NonPositiveTemperature(AEError, ValueError):
    pass


class IndexOutOfRange(AEError, IndexError):
    pass


class EpochOutOfRange(AEError, ValueError):
    pass


class KTooLarge(AEError, ValueError):
    pass


class LabelOutOfRange(AEError, ValueError):
    pass


class MissingSelection(AEError, KeyError):
    pass


class NoValidTriplet(AEError, ValueError):
    pass


class NoValidQueries(AEError, ValueError):
    pass


class ConfigInvalid(AEError, ValueError):
    pass


class DataEmpty(AEError, ValueError):
    pass


class InsufficientCoverage(AEError, ValueError):
    pass


class FormatError(AEError, ValueError):
    """Base for malformed file contents."""


class MagicMismatch(FormatError):
    pass


class VersionUnsupported(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class ParseError(FormatError):
    pass
