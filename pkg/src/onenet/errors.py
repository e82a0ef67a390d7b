"""Exception types shared across the package."""


class OneNetError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(OneNetError, ValueError):
    """Operand shapes are incompatible."""


class GeometryError(OneNetError, ValueError):
    """Spatial extents do not fit the requested window, stride or scale."""


class ContractError(OneNetError, RuntimeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class DomainError(OneNetError, ValueError):
    """An argument lies outside the domain of a closed-form evaluator."""


class ConfigError(OneNetError, ValueError):
    """A model or training configuration is invalid."""


class DataError(OneNetError, ValueError):
    """Input data (labels, images) is malformed."""


class FormatError(OneNetError, ValueError):
    """A binary container is corrupt, truncated or of the wrong version."""


class ConfigMismatchError(FormatError):
    """A weight archive was produced for a different model configuration."""


class TrainingDiverged(OneNetError, RuntimeError):
    """The training loss became non-finite."""
