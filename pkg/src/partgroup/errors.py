"""Exception hierarchy shared by every module."""


class PartGroupError(Exception):
    """Base class for all errors raised by partgroup."""


class ValidationError(PartGroupError, ValueError):
    """Input violates a documented invariant (range, shape, kind)."""


class FormatError(PartGroupError, ValueError):
    """Raster bytes have a malformed magic number or header."""


class LengthError(FormatError):
    """Raster payload is shorter or longer than the header announces."""


class CapacityError(PartGroupError, ValueError):
    """Value does not fit the target on-disk representation."""


class GenerationError(PartGroupError, RuntimeError):
    """Synthetic scene could not be generated within the retry budget."""
