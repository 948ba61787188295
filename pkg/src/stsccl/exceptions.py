class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class LoadError(ValueError):
    """A dataset file is malformed or inconsistent."""


class EmptyStreamError(ValueError):
    """A split range is too short to emit a single window."""


class NumericalError(FloatingPointError):
    """A forward or loss computation produced non-finite values."""


class DomainError(ValueError):
    """An input lies outside the domain of a similarity or loss function."""
