"""Exception hierarchy shared across the package."""


class IcMlpError(Exception):
    """Base class for every error raised by icmlp."""


class DimensionError(IcMlpError, ValueError):
    """Operand shapes are incompatible."""


class ParameterError(IcMlpError, ValueError):
    """A numeric argument lies outside its allowed range."""


class ConfigurationError(IcMlpError, ValueError):
    """A model or training configuration is inconsistent."""


class StateError(IcMlpError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class BatchSizeError(IcMlpError, ValueError):
    """Batch statistics need at least two rows."""


class LabelError(IcMlpError, ValueError):
    """A class label is outside [0, n_classes)."""


class DistributionError(IcMlpError, ValueError):
    """Input is not a probability distribution."""


class FormatError(IcMlpError, ValueError):
    """A model file is malformed.

    ``offset`` is the byte position at which reading failed.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ParseError(IcMlpError, ValueError):
    """A dataset file is malformed; ``line`` is 1-based."""

    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DivergenceError(IcMlpError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index


class DegenerateModelError(IcMlpError, RuntimeError):
    """MC dropout was requested on a model without active dropout."""


class SearchError(IcMlpError, RuntimeError):
    """Every hyperparameter trial failed."""
