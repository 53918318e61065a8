"""Exception types shared across the toolkit."""


class PerfrecError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(PerfrecError, ValueError):
    """A configuration value or combination of values is invalid."""


class DomainError(PerfrecError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(PerfrecError, ValueError):
    """Array dimensions are inconsistent with each other or the geometry."""


class InputError(PerfrecError, ValueError):
    """Input data is empty, non-finite, or otherwise unusable."""


class UnderdeterminedError(InputError):
    """A fit has fewer independent samples than unknowns."""


class FormatError(PerfrecError, ValueError):
    """A file does not conform to the expected on-disk format."""
