"""Exception types shared across the package."""


class UsageError(ValueError):
    """An API was called with arguments violating its contract."""


class ConfigError(ValueError):
    """A configuration file or value is invalid.

    ``key`` names the offending configuration key when known.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NumericError(FloatingPointError):
    """Non-finite values reached a computation that requires finite input."""
