"""Exception hierarchy shared across the package."""


class RdpredictError(Exception):
    """Base class for all package errors."""


class InvalidProblemError(RdpredictError):
    """Operator coefficients violate positivity or evaluability requirements."""


class BracketingError(RdpredictError):
    """Eigenvalue search exhausted its scan window without finding a root."""

    def __init__(self, message, lam_lo=None, lam_hi=None):
        super().__init__(message)
        self.lam_lo = lam_lo
        self.lam_hi = lam_hi


class InvalidDesignError(RdpredictError):
    """Controller design request is infeasible (unstable pole, non-Hurwitz matrix)."""


class InsufficientBasisError(RdpredictError):
    """Not enough stable modes supplied to define a truncation margin."""


class OutOfWindowError(RdpredictError):
    """Control-history lookup older than the retention window (sizing bug)."""


class StepSizeError(RdpredictError):
    """Time step incompatible with the predictor quadrature or stability bound."""


class DivergenceError(RdpredictError):
    """State blew up (NaN/overflow) during integration."""

    def __init__(self, message, t_blowup=None):
        super().__init__(message)
        self.t_blowup = t_blowup


class FitError(RdpredictError):
    """Decay-rate fit impossible (too few samples or non-positive norms)."""


class NumericalDegeneracyError(RdpredictError):
    """A quantity that must vanish in an exact computation failed to."""


class ConfigError(RdpredictError):
    """Malformed configuration file; message names the offending key."""
