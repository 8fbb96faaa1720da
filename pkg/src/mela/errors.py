"""Exception types raised across the package."""


class MelaError(Exception):
    """Base class for library errors."""


class ConfigError(MelaError, ValueError):
    """Invalid configuration or precondition violation."""


class MissingLabelError(MelaError, ValueError):
    pass


class MissingClassError(MelaError, KeyError):
    pass


class DegenerateDataError(MelaError, ValueError):
    pass


class ParseError(MelaError, ValueError):
    """Malformed input file. ``line`` is 1-based."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StageError(MelaError, RuntimeError):
    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
