"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific one that applies rather than bare RuntimeError.
"""


class ParseError(ValueError):
    """A file could not be parsed. Carries the path and 1-based line number."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class ConfigError(ValueError):
    """A configuration field is missing, unknown, or has an invalid value."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


class NumericalError(ArithmeticError):
    """A numeric operation produced NaN/Inf where finite values are required."""


class DivergenceError(RuntimeError):
    """Training diverged.

    ``last_good`` holds the most recent finite parameter snapshot (a
    ``TrainResult``) so callers can still checkpoint something usable.
    """

    def __init__(self, message, last_good=None):
        self.last_good = last_good
        super().__init__(message)
