"""Exception hierarchy for wcemix."""


class WcemixError(Exception):
    """Base class for all wcemix errors."""


class ParameterizationError(WcemixError):
    """Invalid parameter values (non-SPD scale, bad skewness transform, ...)."""


class InitializationError(WcemixError):
    """Starting values could not be constructed from the data."""


class ComponentCollapseError(WcemixError):
    """A component degenerated during an update (vanishing mass or scale).

    Raised inside a single fit; the multi-start driver catches it and
    redraws a fresh initialization.
    """


class FitError(WcemixError):
    """No usable solution was produced by any start."""


class InferenceError(WcemixError):
    """Sandwich covariance could not be computed."""


class DataError(WcemixError):
    """Malformed input data (bad CSV cell, ragged rows, wrong shape)."""
