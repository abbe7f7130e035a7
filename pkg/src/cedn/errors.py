"""Exception types shared across the package."""


class CednError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CednError, ValueError):
    """Array shapes disagree. ``axis`` names the offending axis when known."""

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class ParameterError(CednError, ValueError):
    pass


class ConfigError(CednError, ValueError):
    """Inconsistent network or training configuration. ``stage`` names the culprit."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class InputError(CednError, ValueError):
    pass


class TrainingError(CednError, RuntimeError):
    def __init__(self, message, param=None, epoch=None, step=None):
        super().__init__(message)
        self.param = param
        self.epoch = epoch
        self.step = step


class SpecError(CednError, ValueError):
    """A scene specification cannot be satisfied."""


class ParseError(CednError, ValueError):
    """Malformed file. ``offset`` is the byte offset where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
