class StacktierError(Exception):
    """Base class for pipeline errors."""


class DataError(StacktierError, ValueError):
    """Malformed or incompatible input data."""


class ConfigError(StacktierError, ValueError):
    """Invalid pipeline configuration."""


class ModelFormatError(StacktierError):
    """Unreadable or incompatible model container."""
