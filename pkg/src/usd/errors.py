"""Exception hierarchy shared by every module."""


class USDError(Exception):
    """Base class. ``trace`` holds a partial DescentTrace when a run aborts."""

    trace = None


class DimensionMismatchError(USDError, ValueError):
    pass


class InvalidDimensionError(USDError, ValueError):
    pass


class InvalidBandwidthError(USDError, ValueError):
    pass


class FactorizationError(USDError, ArithmeticError):
    pass


class DivergenceError(USDError, ArithmeticError):
    """Non-finite or exploding quantity during a descent or critic update."""


class PopulationExtinctError(USDError):
    """Every particle was killed during a birth-death step."""


class NoSnapshotsError(USDError, ValueError):
    pass


class ConfigError(USDError, ValueError):
    pass


class PointCloudError(USDError, ValueError):
    """Malformed point-cloud CSV. ``line`` is the 1-based offending line, if known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ImageError(USDError, ValueError):
    pass
