"""Exception types shared across modules.

Plain argument problems raise ``ValueError`` and out-of-range pixel
indices raise ``IndexError``; the classes below mark the failures the CLI
maps to distinct exit codes.
"""


class ConfigError(ValueError):
    """Invalid scene or scenario configuration."""


class DimensionError(ValueError):
    """Raster shapes or geometries do not line up."""


class DataError(ValueError):
    """Non-finite or otherwise unusable numeric input."""


class AvailabilityError(LookupError):
    """Requested observation (coarse SM, lag history, training days) is missing."""


class SchemaError(ValueError):
    """Feature row or mask does not match the expected column layout."""


class StateError(RuntimeError):
    """Object is not in a usable state, e.g. an ensemble with no active trees."""
