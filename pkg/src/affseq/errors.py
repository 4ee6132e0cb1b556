"""Exception hierarchy shared across the package."""


class AffseqError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(AffseqError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(AffseqError):
    """A non-finite value appeared where finite math is required."""


class StateError(AffseqError):
    """An object was used outside its legal lifecycle."""


class FormatError(AffseqError):
    """A file does not conform to its binary or text layout."""


class DataError(AffseqError):
    """Dataset contents violate a contract (labels, pairing, masks)."""


class ConfigError(AffseqError):
    """Invalid or inconsistent configuration."""


class UsageError(AffseqError):
    """Bad command-line usage."""
