"""Exception hierarchy shared by every module of the package."""


class QRMSMError(Exception):
    """Base class for all errors raised by this package."""


class PanelFormatError(QRMSMError, ValueError):
    """Malformed panel input (CSV or arrays)."""


class ConfigError(QRMSMError, ValueError):
    """Invalid experiment or generator configuration."""


class EstimationError(QRMSMError):
    """Base class for failures while fitting a model or solving an equation."""


class SeparationDetected(EstimationError):
    """Logistic likelihood has no finite maximizer (degenerate or separated labels)."""


class SingularInformation(EstimationError):
    """Observed information matrix is not invertible."""


class NotConverged(EstimationError):
    """Newton iterations hit the iteration cap before the gradient tolerance."""


class NoEvents(EstimationError):
    """A rate model was requested on data without any observed event."""


class RankDeficientDesign(EstimationError):
    """Least squares design matrix does not have full column rank."""


class InsufficientRows(EstimationError):
    """Too few usable rows for the requested fit."""


class NonFinitePropensity(EstimationError):
    """Fitted treatment probability is numerically 0 or 1 (positivity violation)."""


class ZeroIntensityAtEvent(EstimationError):
    """Fitted observation intensity is zero at a bin with an observed outcome."""


class NoObservedEvents(EstimationError):
    """Estimating equation has no observed outcome to work with."""


class MissingBaseline(EstimationError):
    """Stabilized intensity weights were supplied where the baseline is required."""


class PositivityViolation(EstimationError):
    """Variance formula inputs contain probabilities outside (0, 1]."""


class ResampleDegenerate(EstimationError):
    """Too many bootstrap resamples lacked an arm or lacked events."""


class MonteCarloFailure(EstimationError):
    """Too many replicates failed within a Monte Carlo cell."""
