"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ConfigError(ValueError):
    """A configuration value is invalid or infeasible."""


class DegenerateAffineError(ValueError):
    """A RevIN scale parameter is too close to zero to invert."""


class EmptyWindowError(ValueError):
    """Statistics were requested over a window of length zero."""


class StateError(RuntimeError):
    """A cache or optimizer state does not match the call it is used with."""


class EvaluationError(ArithmeticError):
    """A function evaluation returned a non-finite value."""


class TrainingError(RuntimeError):
    """Training diverged or received a non-finite gradient."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class DataFormatError(ValueError):
    """A CSV cell could not be parsed."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class OrderingError(DataFormatError):
    """Timestamps are not strictly increasing."""


class ConstantChannelError(ValueError):
    """A channel has zero variance over the training range."""

    def __init__(self, channel):
        super().__init__(f"channel {channel!r} is constant over the train range; cannot standardize")
        self.channel = channel


class MeasurementError(RuntimeError):
    """Not enough epochs to produce a timing measurement."""
