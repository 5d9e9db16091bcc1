"""Exception types shared across the package."""


class GlgRobustError(Exception):
    """Base class for all package errors."""


class SurvivalUnderflowError(GlgRobustError):
    """A survival probability underflowed below 1e-300 where a positive value is required."""


class DensityUnderflowError(GlgRobustError):
    """A smoothed model density underflowed where a Pearson residual is required."""


class DegenerateSampleError(GlgRobustError):
    """The sample cannot support the requested estimate (e.g. no uncensored rows)."""


class TooFewQuantilesError(GlgRobustError):
    """Fewer retained quantile residuals than the minimum the objective needs."""


class SingularJacobianError(GlgRobustError):
    """A Newton-step Jacobian is singular or numerically unusable."""


class NumericError(GlgRobustError):
    """A numerical routine failed (bracket expansion, non-convergent quadrature, ...)."""
