class LineCounterError(Exception):
    """Base class for every error raised by the linecounter package."""


class ShapeError(LineCounterError, ValueError):
    pass


class ConfigError(LineCounterError, ValueError):
    pass


class FormatError(LineCounterError, ValueError):
    """
    Raised when a PGM, manifest or checkpoint file cannot be parsed.

    Attributes:
        field (str): Name of the offending header field, if known.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ManifestError(LineCounterError, ValueError):
    pass


class GenerationError(LineCounterError, RuntimeError):
    pass


class NonFiniteError(LineCounterError, FloatingPointError):
    """
    Raised when a NaN or Inf shows up in an activation, a loss or a gradient.

    Attributes:
        where (str): Layer or parameter name the value was found in.
        batch_id (int): Offending batch index, set by the trainer.
        seed (int): Training seed, set by the trainer.
    """

    def __init__(self, message, where=None, batch_id=None, seed=None):
        super().__init__(message)
        self.where = where
        self.batch_id = batch_id
        self.seed = seed
