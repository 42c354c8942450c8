class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class SchedulingError(RuntimeError):
    """A scheduler was asked for an assignment it cannot produce."""
