"""Exception hierarchy shared across the package."""


class MarkerPackError(Exception):
    """Base class for all package-specific errors."""


class InputError(MarkerPackError):
    """An input file is unreadable or not parseable at all."""


class DataValidationError(MarkerPackError):
    """A document, mention, or label violates a corpus invariant."""


class ConfigError(MarkerPackError):
    """A configuration value is inconsistent or out of range."""


class DataError(MarkerPackError):
    """Runtime data is unusable (empty corpus, label out of range, ...)."""


class LayoutError(MarkerPackError):
    """An encoding layout cannot be built or failed validation."""


class SlotOverflowError(LayoutError):
    """A layout would exceed the encoder's slot budget."""


class NumericError(MarkerPackError):
    """A forward pass produced NaN or Inf."""
