"""Exception hierarchy shared by all confsynth modules."""


class ConfsynthError(Exception):
    """Base class for all errors raised by confsynth."""


class ConfigError(ConfsynthError, ValueError):
    """A parameter is outside its allowed range (usage error)."""


class DataError(ConfsynthError, ValueError):
    """Input data violates a dataset or model invariant."""


class ResourceError(ConfsynthError):
    """A computation would exceed a configured resource limit."""
