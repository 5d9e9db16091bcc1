"""Generalized log-gamma (GLG) distribution family.

The family is parameterized by location ``mu``, scale ``sigma > 0`` and shape
``lam``; a variable ``y`` follows the model when ``u = (y - mu)/sigma`` has the
standardized density

    f_lam(u) = |lam| / Gamma(lam^-2) * (lam^-2)^(lam^-2)
               * exp(lam^-2 * (lam*u - exp(lam*u)))      for lam != 0,

with the standard normal density as the ``lam = 0`` member.  The family
contains the log-Weibull (``lam = 1``), log-exponential (``lam = 1``,
``sigma = 1``), log-gamma (``sigma = lam``) and normal (``lam = 0``) models.

All evaluation routines are pure functions vectorized over the data argument;
parameters are scalars.  The cdf and quantile go through the regularized
incomplete gamma function rather than quadrature.

Numerical policy (module constants below):

* the normal branch is used whenever ``|lam| < LAMBDA_NORMAL_EPS`` because the
  general formula is 0/0-unstable in that neighbourhood;
* the shape score ``psi`` has no numerically stable closed form near
  ``lam = 0``; below ``_PSI_FD_BAND`` it falls back to a central finite
  difference of the log density in ``lam`` (documented fallback, not a guessed
  closed form);
* ``dF/dlam`` is always a central finite difference, with a widened step near
  ``lam = 0`` so that both evaluation points stay clear of the normal branch;
* survival probabilities below 1e-300 raise :class:`SurvivalUnderflowError`
  wherever a later division by the survival would occur.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import SurvivalUnderflowError

__all__ = [
    "GlgParams",
    "density",
    "log_density",
    "cdf",
    "survival",
    "quantile_std",
    "quantile",
    "pdf",
    "log_pdf",
    "cdf_at",
    "survival_at",
    "log_survival_at",
    "neg_log_density",
    "draw",
    "xi",
    "xi_prime",
    "zeta",
    "psi",
    "psi_prime",
    "score_uncensored",
    "score_censored",
    "score_mixed",
    "score_jacobian_uncensored",
    "cdf_lambda_derivative",
    "neg_loglik",
]

#: |lam| below this evaluates the normal member of the family.
LAMBDA_NORMAL_EPS = 1e-5

#: |lam| below this uses the finite-difference fallback for psi (shape score).
_PSI_FD_BAND = 2e-3
_PSI_FD_STEP = 1e-3

#: survival values below this raise SurvivalUnderflowError.
SURVIVAL_FLOOR = 1e-300

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GlgParams:
    """Parameter triple (mu, sigma, lam) of a GLG distribution.

    ``mu`` is the location in log-time units, ``sigma > 0`` the scale and
    ``lam`` the shape. All fields must be finite.
    """

    mu: float
    sigma: float
    lam: float

    def __post_init__(self):
        for name in ("mu", "sigma", "lam"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"GlgParams.{name} must be finite, got {v!r}")
        if self.sigma <= 0:
            raise ValueError(f"GlgParams.sigma must be > 0, got {self.sigma!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.mu, self.sigma, self.lam], dtype=float)

    @classmethod
    def from_array(cls, v) -> "GlgParams":
        v = np.asarray(v, dtype=float)
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def standardize(self, y):
        """Return u = (y - mu)/sigma."""
        return (np.asarray(y, dtype=float) - self.mu) / self.sigma


def _maybe_scalar(x, scalar_in: bool):
    return float(x) if scalar_in and np.ndim(x) == 0 else x


def log_density(u, lam: float):
    """log f_lam(u) of the standardized GLG density."""
    scalar = np.isscalar(u)
    u = np.asarray(u, dtype=float)
    if abs(lam) < LAMBDA_NORMAL_EPS:
        out = -0.5 * u * u - _LOG_SQRT_2PI
        return _maybe_scalar(out, scalar)
    a = lam ** -2
    with np.errstate(over="ignore"):
        e = np.exp(lam * u)
        out = (
            np.log(abs(lam))
            - special.gammaln(a)
            + a * np.log(a)
            + a * (lam * u - e)
        )
    # exp overflow drives the exponent to -inf, which is the correct limit
    return _maybe_scalar(np.where(np.isnan(out), -np.inf, out), scalar)


def density(u, lam: float):
    """Standardized GLG density f_lam(u); total on finite inputs."""
    return np.exp(log_density(u, lam))


def neg_log_density(u, lam: float):
    """l_lam(u) = -log f_lam(u), the likelihood-scale transform of a residual."""
    return -log_density(u, lam)


def cdf(u, lam: float):
    """F_lam(u) via the regularized incomplete gamma identity.

    P(lam^-2, lam^-2 exp(lam*u)) for lam > 0, its complement for lam < 0 and
    the standard normal cdf at lam = 0.  Monotone nondecreasing in u.
    """
    scalar = np.isscalar(u)
    u = np.asarray(u, dtype=float)
    if abs(lam) < LAMBDA_NORMAL_EPS:
        return _maybe_scalar(special.ndtr(u), scalar)
    a = lam ** -2
    with np.errstate(over="ignore"):
        x = a * np.exp(lam * u)
    if lam > 0:
        out = special.gammainc(a, x)
    else:
        out = special.gammaincc(a, x)
    return _maybe_scalar(out, scalar)


def survival(u, lam: float):
    """S_lam(u) = 1 - F_lam(u), evaluated through the complementary route."""
    scalar = np.isscalar(u)
    u = np.asarray(u, dtype=float)
    if abs(lam) < LAMBDA_NORMAL_EPS:
        return _maybe_scalar(special.ndtr(-u), scalar)
    a = lam ** -2
    with np.errstate(over="ignore"):
        x = a * np.exp(lam * u)
    if lam > 0:
        out = special.gammaincc(a, x)
    else:
        out = special.gammainc(a, x)
    return _maybe_scalar(out, scalar)


def _bisect_quantile(p, lam, q0):
    """Bisection fallback for quantile points that failed the round-trip check."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q0 = np.atleast_1d(np.asarray(q0, dtype=float)).copy()
    out = np.empty_like(q0)
    for i, (pi, qi) in enumerate(zip(p, q0)):
        lo, hi = (qi - 1.0, qi + 1.0) if np.isfinite(qi) else (-1.0, 1.0)
        for _ in range(200):
            if cdf(lo, lam) <= pi:
                break
            lo -= max(1.0, abs(lo))
        for _ in range(200):
            if cdf(hi, lam) >= pi:
                break
            hi += max(1.0, abs(hi))
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if cdf(mid, lam) < pi:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-14 * max(1.0, abs(hi)):
                break
        out[i] = 0.5 * (lo + hi)
    return out


def quantile_std(p, lam: float):
    """Q*(p, lam): quantile of the standardized distribution, p in (0, 1).

    Computed by inverting the incomplete gamma identity, then polished with a
    Newton step on the cdf so that |cdf(Q*(p)) - p| <= 1e-10; stragglers fall
    back to bisection.
    """
    scalar = np.isscalar(p)
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)) or not np.all(np.isfinite(p)):
        raise ValueError("quantile probabilities must lie strictly in (0, 1)")
    if abs(lam) < LAMBDA_NORMAL_EPS:
        return _maybe_scalar(special.ndtri(p), scalar)
    a = lam ** -2
    with np.errstate(divide="ignore", invalid="ignore"):
        if lam > 0:
            x = special.gammaincinv(a, p)
        else:
            x = special.gammainccinv(a, p)
        q = np.log(x / a) / lam
    q = np.atleast_1d(q)
    p1 = np.atleast_1d(p)
    # Newton polish on the cdf; two steps are enough away from the extreme tails
    for _ in range(2):
        err = cdf(q, lam) - p1
        f = density(q, lam)
        step = np.where(f > 0, err / np.where(f > 0, f, 1.0), 0.0)
        q = q - np.clip(step, -1.0, 1.0)
    bad = ~np.isfinite(q) | (np.abs(cdf(q, lam) - p1) > 1e-10)
    if np.any(bad):
        q[bad] = _bisect_quantile(p1[bad], lam, q[bad])
    out = q if p.ndim else q[0]
    return _maybe_scalar(out, scalar)


def quantile_std_sf(s, lam: float):
    """Quantile at upper-tail probability s (in (0, 1)); avoids 1 - p loss.

    quantile_std_sf(s, lam) == quantile_std(1 - s, lam) up to roundoff, but
    stays accurate when s is tiny.
    """
    scalar = np.isscalar(s)
    s = np.asarray(s, dtype=float)
    if np.any((s <= 0.0) | (s >= 1.0)) or not np.all(np.isfinite(s)):
        raise ValueError("upper-tail probabilities must lie strictly in (0, 1)")
    if abs(lam) < LAMBDA_NORMAL_EPS:
        return _maybe_scalar(-special.ndtri(s), scalar)
    a = lam ** -2
    with np.errstate(divide="ignore", invalid="ignore"):
        if lam > 0:
            x = special.gammainccinv(a, s)
        else:
            x = special.gammaincinv(a, s)
        q = np.log(x / a) / lam
    q = np.atleast_1d(q)
    s1 = np.atleast_1d(s)
    for _ in range(2):
        err = survival(q, lam) - s1
        f = density(q, lam)
        step = np.where(f > 0, -err / np.where(f > 0, f, 1.0), 0.0)
        q = q - np.clip(step, -1.0, 1.0)
    out = q if s.ndim else q[0]
    return _maybe_scalar(out, scalar)


def quantile(p, params: GlgParams):
    """Q(p, theta) = sigma * Q*(p, lam) + mu."""
    return params.mu + params.sigma * quantile_std(p, params.lam)


def pdf(y, params: GlgParams):
    """Density of y under theta, composed exactly as f_lam((y-mu)/sigma)/sigma."""
    return density(params.standardize(y), params.lam) / params.sigma


def log_pdf(y, params: GlgParams):
    return log_density(params.standardize(y), params.lam) - np.log(params.sigma)


def cdf_at(y, params: GlgParams):
    return cdf(params.standardize(y), params.lam)


def survival_at(y, params: GlgParams):
    return survival(params.standardize(y), params.lam)


def log_survival_at(y, params: GlgParams):
    """log S_theta(y); raises SurvivalUnderflowError below the 1e-300 floor."""
    s = survival_at(y, params)
    if np.any(np.asarray(s) < SURVIVAL_FLOOR):
        raise SurvivalUnderflowError(
            "survival underflow: S_theta(y) < 1e-300 for some observation"
        )
    return np.log(s)


def draw(params: GlgParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Random sample of given size from the GLG(mu, sigma, lam) distribution."""
    lam = params.lam
    if abs(lam) < LAMBDA_NORMAL_EPS:
        u = rng.standard_normal(size)
    else:
        a = lam ** -2
        u = np.log(rng.gamma(a, 1.0, size) / a) / lam
    return params.mu + params.sigma * u


# ---------------------------------------------------------------------------
# score building blocks
# ---------------------------------------------------------------------------

def xi(u, lam: float):
    """xi_lam(u) = (1 - exp(lam*u)) / lam, with the exact lam = 0 limit -u."""
    u = np.asarray(u, dtype=float)
    if lam == 0.0:
        return -u
    with np.errstate(over="ignore"):
        return -np.expm1(lam * u) / lam


def xi_prime(u, lam: float):
    """d/du xi_lam(u) = -exp(lam*u) (equals -1 at lam = 0)."""
    with np.errstate(over="ignore"):
        return -np.exp(lam * np.asarray(u, dtype=float))


def zeta(lam: float) -> float:
    """zeta(lam) = -2 log|lam| - digamma(lam^-2) + 1."""
    return float(-2.0 * np.log(abs(lam)) - special.digamma(lam ** -2) + 1.0)


def psi(u, lam: float):
    """Shape score psi_lam(u) = -d/dlam log f_lam(u).

    Closed form away from lam = 0; a central finite difference of the log
    density in lam inside |lam| < 2e-3, where the closed form loses all
    significant digits to cancellation.
    """
    scalar = np.isscalar(u)
    u = np.asarray(u, dtype=float)
    if abs(lam) < _PSI_FD_BAND:
        h = _PSI_FD_STEP
        out = -(log_density(u, lam + h) - log_density(u, lam - h)) / (2.0 * h)
        return _maybe_scalar(out, scalar)
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.exp(lam * u)
        num = 2.0 * zeta(lam) - lam * lam + lam * u - e * (2.0 - lam * u)
        out = num / lam ** 3
    # exp overflow: the e*(2 - lam*u) term dominates with sign lam*u - 2 > 0
    out = np.where(np.isnan(out), np.sign(lam) * np.inf, out)
    return _maybe_scalar(out, scalar)


def _g_ratio(t):
    """(1 - exp(t) + t*exp(t)) / t**2 with a series branch near t = 0."""
    t = np.asarray(t, dtype=float)
    small = np.abs(t) < 0.05
    ts = np.where(small, t, 0.0)
    series = 0.5 + ts * (1.0 / 3.0 + ts * (0.125 + ts * (1.0 / 30.0 + ts * (1.0 / 144.0 + ts / 840.0))))
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        tb = np.where(small, 1.0, t)
        direct = (-np.expm1(tb) + tb * np.exp(tb)) / (tb * tb)
    return np.where(small, series, direct)


def psi_prime(u, lam: float):
    """d/du psi_lam(u) = u^2 * (1 - exp(lam*u)*(1 - lam*u)) / (lam*u)^2."""
    u = np.asarray(u, dtype=float)
    return u * u * _g_ratio(lam * u)


def cdf_lambda_derivative(u, lam: float):
    """dF_lam(u)/dlam by central finite differences.

    Step 1e-6*max(1,|lam|) away from zero; near lam = 0 the step widens to
    1e-3 so both evaluation points clear the normal-branch crossover.  In the
    right tail the difference runs through the survival function, which keeps
    full relative precision where the cdf saturates at 1.
    """
    if abs(lam) > 1e-3:
        h = 1e-6 * max(1.0, abs(lam))
    else:
        h = 1e-3
    u = np.asarray(u, dtype=float)
    via_cdf = (cdf(u, lam + h) - cdf(u, lam - h)) / (2.0 * h)
    via_surv = -(survival(u, lam + h) - survival(u, lam - h)) / (2.0 * h)
    right_tail = np.asarray(cdf(u, lam)) > 0.5
    return np.where(right_tail, via_surv, via_cdf)


# ---------------------------------------------------------------------------
# score functions
# ---------------------------------------------------------------------------

def score_uncensored(y, params: GlgParams):
    """(d1, d2, d3): minus the gradient of log f_theta(y) in (mu, sigma, lam).

    Returns shape (3,) for scalar y, (3, n) for a vector of observations.
    """
    scalar = np.isscalar(y)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    u = params.standardize(y)
    x = xi(u, params.lam)
    d1 = x / params.sigma
    d2 = (x * u + 1.0) / params.sigma
    d3 = np.atleast_1d(psi(u, params.lam))
    out = np.stack([d1, d2, d3])
    return out[:, 0] if scalar else out


def score_censored(y, params: GlgParams):
    """(s1, s2, s3): minus the gradient of log S_theta(y) in (mu, sigma, lam).

    Requires S_theta(y) above the underflow floor.  s3 uses the finite
    difference dF/dlam.
    """
    scalar = np.isscalar(y)
    u = params.standardize(y)
    s = survival(u, params.lam)
    if np.any(np.asarray(s) < SURVIVAL_FLOOR):
        raise SurvivalUnderflowError("survival underflow in censored score")
    f = density(u, params.lam)
    s1 = -f / (params.sigma * s)
    s2 = s1 * u
    s3 = cdf_lambda_derivative(u, params.lam) / s
    if scalar:
        return np.array([float(s1), float(s2), float(s3)])
    return np.stack([s1, s2, s3])


def score_mixed(y, delta, params: GlgParams):
    """v_k = delta*d_k + (1-delta)*s_k, the censored-data score.

    Vectorized over paired arrays (y, delta); scalar delta must be 0 or 1.
    """
    scalar = np.isscalar(y)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    delta = np.atleast_1d(np.asarray(delta))
    if not np.all((delta == 0) | (delta == 1)):
        raise ValueError("delta entries must be 0 or 1")
    out = np.empty((3, y.size))
    unc = delta == 1
    if np.any(unc):
        out[:, unc] = score_uncensored(y[unc], params)
    if np.any(~unc):
        out[:, ~unc] = score_censored(y[~unc], params)
    return out[:, 0] if scalar else out


def score_jacobian_uncensored(y, params: GlgParams):
    """Gradient matrix G_d of the uncensored score d in (mu, sigma, lam).

    Analytic entries in the (mu, sigma) block via xi' and psi'; the lam
    column by central finite differences.  Shape (3, 3) for scalar y and
    (n, 3, 3) for a vector.
    """
    scalar = np.isscalar(y)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    sig, lam = params.sigma, params.lam
    u = params.standardize(y)
    x = xi(u, lam)
    xp = xi_prime(u, lam)
    pp = psi_prime(u, lam)

    h = 1e-6 * max(1.0, abs(lam))
    xi_dot = (xi(u, lam + h) - xi(u, lam - h)) / (2.0 * h)
    h2 = 1e-3 * max(1.0, abs(lam))
    psi_dot = -(
        log_density(u, lam + h2) - 2.0 * log_density(u, lam) + log_density(u, lam - h2)
    ) / (h2 * h2)

    g = np.empty((y.size, 3, 3))
    g[:, 0, 0] = -xp / sig ** 2
    g[:, 0, 1] = -(x + xp * u) / sig ** 2
    g[:, 0, 2] = xi_dot / sig
    g[:, 1, 0] = -(xp * u + x) / sig ** 2
    g[:, 1, 1] = -(2.0 * x * u + xp * u * u + 1.0) / sig ** 2
    g[:, 1, 2] = xi_dot * u / sig
    g[:, 2, 0] = -pp / sig
    g[:, 2, 1] = -pp * u / sig
    g[:, 2, 2] = psi_dot
    return g[0] if scalar else g


def neg_loglik(sample, params: GlgParams) -> float:
    """Negative log-likelihood of a right-censored sample.

    ``sample`` is anything with ``y`` and ``delta`` array attributes (see
    :class:`glgrobust.censored.CensoredSample`).  Censored terms go through
    ``log_survival_at`` and inherit its underflow error.
    """
    y = np.asarray(sample.y, dtype=float)
    delta = np.asarray(sample.delta)
    out = 0.0
    unc = delta == 1
    if np.any(unc):
        out -= float(np.sum(log_pdf(y[unc], params)))
    if np.any(~unc):
        out -= float(np.sum(log_survival_at(y[~unc], params)))
    return out
