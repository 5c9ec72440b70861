"""Exception hierarchy shared by every module."""


class LemmaError(Exception):
    """Base class for all library errors."""


class ShapeError(LemmaError):
    """Tensor shapes incompatible with the requested operation."""


class DimensionError(LemmaError):
    """Spatial dimensions violate a divisibility or consistency requirement."""


class ContractError(LemmaError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class NumericError(LemmaError):
    """An operation produced non-finite values from finite inputs."""


class LabelError(LemmaError):
    """A class-index map contains an out-of-range label."""


class ConfigError(LemmaError):
    """Invalid model, loss, or dataset configuration."""


class TrainingError(LemmaError):
    """Training-loop failure (missing gradient, divergence, bad resume)."""


class UndefinedMetricError(LemmaError):
    """A metric is undefined for the accumulated data (e.g. empty matrix)."""


class DataError(LemmaError):
    """Dataset file missing, unreadable, or in the wrong format."""
