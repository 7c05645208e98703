"""Predictor-feedback stabilization of reaction-diffusion systems under
time- and space-varying input delay."""

__version__ = "0.1.0"

from .backend import backend_name  # noqa: F401
from .control import PredictorState, TransitionSignal  # noqa: F401
from .delayfield import ControlHistory, DelayField  # noqa: F401
from .design import (ControllerDesign, SmallGainCertificate, certify,  # noqa: F401
                     decay_envelope, make_design, max_delta, place_poles,
                     select_truncation, small_gain_lhs)
from .sim import SimulationConfig, SimulationRun, fd_oracle, fit_decay, run  # noqa: F401
from .spectral import (Coefficient, Grid, SpectralBasis,  # noqa: F401
                       SturmLiouvilleProblem, project, solve_eigensystem,
                       synthesize)
