"""Shared exception types."""


class UndefinedMetric(RuntimeError):
    """A derived quantity has no defined value (for instance a zero denominator).

    The ``reason`` attribute carries a human-readable explanation so callers
    can report the condition instead of a bare number.
    """

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class ConvergenceError(RuntimeError):
    """A solver failed to reach its accuracy target within its refinement budget."""


class ConfigError(ValueError):
    """A configuration file or override is malformed or names an unknown key."""
