"""Exception types shared across the trainer."""


class TurboliftError(Exception):
    """Base class for all trainer errors."""


class ConfigurationError(TurboliftError, ValueError):
    """A configuration value or combination of values is invalid."""


class ShapeError(TurboliftError, ValueError):
    """Tensor dimensions are inconsistent with each other or the model."""


class ManifestError(TurboliftError, ValueError):
    """A dataset manifest is missing, malformed, or lacks a requested entry."""


class ScheduleError(TurboliftError, ValueError):
    """A stage schedule or checkpoint lineage is inconsistent."""


class FormatError(TurboliftError, ValueError):
    """A file does not conform to the expected on-disk format."""
