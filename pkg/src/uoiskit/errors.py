"""Exception types shared across the toolkit."""


class UoiskitError(Exception):
    """Base class for all toolkit errors."""


class InvalidDimensions(UoiskitError):
    """Shapes or sizes of two operands do not agree."""


class CorruptMask(UoiskitError):
    """An RLE mask record violates its invariants."""


class EmptyMask(UoiskitError):
    """An operation requiring a nonempty mask received an empty one."""


class PlacementFailure(UoiskitError):
    """Scene generation could not place the minimum object count."""


class DatasetError(UoiskitError):
    """A dataset manifest is missing, malformed, or inconsistent."""


class SamplingError(UoiskitError):
    """Prompt sampling is impossible for the requested scene."""


class NumericalError(UoiskitError):
    """Training or optimization produced non-finite values."""


class ConfigError(UoiskitError):
    """A run configuration is missing or invalid."""


class InvalidPrompt(UoiskitError):
    """A point prompt lies outside the image bounds."""
