"""Robust, asymptotically efficient estimation for generalized log-gamma
models and AFT regression with right-censored data."""

from .censored import CensoredSample, KaplanMeier, SemiparametricCdf, kaplan_meier
from .errors import (
    DegenerateSampleError,
    DensityUnderflowError,
    GlgRobustError,
    NumericError,
    SingularJacobianError,
    SurvivalUnderflowError,
    TooFewQuantilesError,
)
from .glg import GlgParams
from .qtau import QtauConfig, fit_tqtau
from .report import EstimateReport
from .scales import TauScaleConfig, m_scale, rho_tukey, tau_scale

__version__ = "0.1.0"

__all__ = [
    "CensoredSample",
    "KaplanMeier",
    "SemiparametricCdf",
    "kaplan_meier",
    "GlgParams",
    "QtauConfig",
    "fit_tqtau",
    "EstimateReport",
    "TauScaleConfig",
    "m_scale",
    "rho_tukey",
    "tau_scale",
    "GlgRobustError",
    "SurvivalUnderflowError",
    "DensityUnderflowError",
    "DegenerateSampleError",
    "TooFewQuantilesError",
    "SingularJacobianError",
    "NumericError",
    "__version__",
]
