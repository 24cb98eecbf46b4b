"""Exception hierarchy.

Each family maps onto one CLI exit code: configuration problems exit 2,
data problems exit 3 and runtime/numeric problems exit 4.
"""


class PointSegError(Exception):
    exit_code = 4


class ConfigError(PointSegError, ValueError):
    exit_code = 2


class DataError(PointSegError, ValueError):
    exit_code = 3


class ShapeError(DataError):
    """Incompatible array geometry or channel count."""


class GeometryError(DataError):
    """Patch or tile does not fit inside its parent raster."""


class CoverageError(DataError):
    """Stitched tiles leave some pixel uncovered."""


class DomainError(DataError):
    """Value outside the domain an operation accepts (bad label, bad temperature...)."""


class EmptySupervisionError(DataError):
    """A loss was asked to average over zero labeled pixels."""


class GenerationError(DataError):
    pass


class FormatError(DataError):
    """Malformed raster or checkpoint file."""


class ContractError(PointSegError):
    pass


class ScheduleError(PointSegError, ValueError):
    pass


class TrainingDivergenceError(PointSegError, FloatingPointError):
    pass
