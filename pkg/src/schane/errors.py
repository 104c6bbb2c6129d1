"""Exception hierarchy shared by every module."""


class SchaneError(Exception):
    """Base class for all library errors."""


class ShapeError(SchaneError, ValueError):
    pass


class DegenerateVector(SchaneError, ValueError):
    pass


class DegenerateInput(SchaneError, ValueError):
    pass


class EmptyInput(SchaneError, ValueError):
    pass


class NonFiniteError(SchaneError, ValueError):
    """NaN or Inf reached a place that only admits finite values."""


class FormatError(SchaneError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyDataset(SchaneError, ValueError):
    pass


class CountMismatch(SchaneError, ValueError):
    pass


class InsufficientSamples(SchaneError, ValueError):
    pass


class InsufficientClasses(SchaneError, ValueError):
    pass


class CacheMismatch(SchaneError, ValueError):
    pass


class LabelError(SchaneError, ValueError):
    pass


class NoNegatives(SchaneError, ValueError):
    pass


class ViewPairingError(SchaneError, ValueError):
    pass


class ConfigError(SchaneError, ValueError):
    def __init__(self, message, field=None):
        self.field = field
        if field is not None and field not in message:
            message = f"{field}: {message}"
        super().__init__(message)
