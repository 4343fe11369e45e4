"""Exception types shared across the package."""


class GaitSetError(Exception):
    """Base class for all package errors."""


class DimensionError(GaitSetError):
    """Tensor shapes do not satisfy an operation's contract."""


class ConfigError(GaitSetError):
    """A configuration value is out of its legal range or inconsistent."""


class IngestError(GaitSetError):
    """Dataset scanning or image loading failed."""


class UsageError(GaitSetError):
    """An API was called in an unsupported way (e.g. backward on a non-scalar)."""


class ProtocolError(GaitSetError):
    """An evaluation protocol cannot be carried out on the given data."""


class CompatibilityError(GaitSetError):
    """Artifacts from different models or versions were mixed."""
