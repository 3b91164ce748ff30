"""Exception hierarchy shared by all pipeline stages."""


class PaleoReconError(Exception):
    """Base class for errors raised by this package."""


class DomainError(PaleoReconError, ValueError):
    """An argument lies outside the domain of a numerical routine."""


class EstimationError(PaleoReconError):
    """A fit failed; ``best`` carries the best iterate found, if any."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class CalibrationError(PaleoReconError):
    """A calibration table could not be evaluated or inverted."""


class DataError(PaleoReconError):
    """Input data is malformed or inconsistent."""


class ConfigError(PaleoReconError):
    """The pipeline configuration is invalid."""
