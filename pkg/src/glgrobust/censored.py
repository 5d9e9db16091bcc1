"""Censored-sample data model and the estimators built directly on it.

Holds the right-censored sample container, the Kaplan-Meier product-limit
estimator with Greenwood variances, the semiempirical cdf H_{n,theta} (the
empirical cdf with censored mass redistributed by the model's conditional
law), conditional-expectation quadrature against a fitted model, and the
likelihood-scale cdfs used by the adaptive truncation rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from . import glg
from .errors import DegenerateSampleError, NumericError, SurvivalUnderflowError
from .glg import GlgParams

__all__ = [
    "CensoredSample",
    "KaplanMeier",
    "SemiparametricCdf",
    "kaplan_meier",
    "km_jump_weights",
    "km_quantile_pairs",
    "gauss_legendre_nodes",
    "conditional_score_expectation",
    "likelihood_min",
    "likelihood_residual_bounds",
    "likelihood_cdf_model",
    "likelihood_cdf_model_inverse",
    "likelihood_cdf_semiempirical",
]


@dataclass(frozen=True)
class CensoredSample:
    """Right-censored observations (y_i*, delta_i), optionally with covariates.

    ``y`` are the observed values (event time if delta = 1, censoring time if
    delta = 0), on whatever scale the model is fitted (log-times for AFT
    work).  ``x`` is an optional n-by-p covariate matrix.  Estimation
    routines require at least one uncensored row and raise
    :class:`DegenerateSampleError` otherwise.
    """

    y: np.ndarray
    delta: np.ndarray
    x: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        delta = np.asarray(self.delta, dtype=np.int8)
        if y.ndim != 1 or y.size < 1:
            raise ValueError("y must be a nonempty 1-d array")
        if delta.shape != y.shape:
            raise ValueError("delta must match y in shape")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite entries")
        if not np.all((delta == 0) | (delta == 1)):
            raise ValueError("delta entries must be 0 or 1")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", delta)
        if self.x is not None:
            x = np.asarray(self.x, dtype=float)
            if x.ndim == 1:
                x = x[:, None]
            if x.shape[0] != y.size:
                raise ValueError("covariate matrix must have one row per observation")
            if not np.all(np.isfinite(x)):
                raise ValueError("covariates contain non-finite entries")
            object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def n_uncensored(self) -> int:
        return int(np.sum(self.delta == 1))

    @property
    def p(self) -> int:
        return 0 if self.x is None else self.x.shape[1]

    def require_events(self):
        if self.n_uncensored == 0:
            raise DegenerateSampleError("sample has no uncensored observations")

    def without_covariates(self) -> "CensoredSample":
        return CensoredSample(self.y, self.delta) if self.x is not None else self


@dataclass(frozen=True)
class KaplanMeier:
    """Product-limit estimate of the cdf at the distinct uncensored times.

    ``cdf_values`` is the KM cdf immediately after each jump;
    ``greenwood_var`` the Greenwood variance of the cdf there.  ``event_counts``
    and ``at_risk`` keep the group sizes so per-observation quantile levels can
    be reconstructed.
    """

    jump_points: np.ndarray
    cdf_values: np.ndarray
    greenwood_var: np.ndarray
    event_counts: np.ndarray
    at_risk: np.ndarray
    n: int


def kaplan_meier(sample: CensoredSample) -> KaplanMeier:
    """Kaplan-Meier estimator with Greenwood variances.

    Ties between censored and uncensored observations at equal times are
    resolved uncensored-first.  While no censored observation has been
    passed, the survivor fraction is written as the exact integer ratio, so
    with no censoring the cdf values equal i/n exactly.
    """
    sample.require_events()
    y, delta, n = sample.y, sample.delta, sample.n
    order = np.lexsort((1 - delta, y))
    ys, ds = y[order], delta[order]

    jumps, cdf_vals, gw, counts, risks = [], [], [], [], []
    surv = 1.0
    gw_sum = 0.0
    censored_seen = 0
    i = 0
    while i < n:
        if ds[i] == 0:
            censored_seen += 1
            i += 1
            continue
        t = ys[i]
        j = i
        while j < n and ds[j] == 1 and ys[j] == t:
            j += 1
        d = j - i
        at_risk = n - i
        surv *= (at_risk - d) / at_risk
        if censored_seen == 0:
            # exact while the product still telescopes over integer counts
            surv = (at_risk - d) / n
        if at_risk > d:
            gw_sum += d / (at_risk * (at_risk - d))
            var = surv * surv * gw_sum
        else:
            var = 0.0  # terminal jump: survivor fraction is exactly zero
        jumps.append(t)
        cdf_vals.append(1.0 - surv)
        gw.append(var)
        counts.append(d)
        risks.append(at_risk)
        i = j
    return KaplanMeier(
        jump_points=np.asarray(jumps),
        cdf_values=np.asarray(cdf_vals),
        greenwood_var=np.asarray(gw),
        event_counts=np.asarray(counts, dtype=int),
        at_risk=np.asarray(risks, dtype=int),
        n=n,
    )


def km_jump_weights(values, delta):
    """KM probability mass per observation, in the given row order.

    Censored rows get zero mass here and act only through the at-risk counts;
    the mass the estimator leaves beyond the largest observation is returned
    separately.  Tied events are processed sequentially (continuous-ties
    convention), which leaves group totals identical to the grouped form.

    Returns ``(weights, tail_mass)``.
    """
    v = np.asarray(values, dtype=float)
    d = np.asarray(delta)
    n = v.size
    order = np.lexsort((1 - d, v))
    ds = d[order]
    at_risk = n - np.arange(n)
    haz = np.where(ds == 1, 1.0 / at_risk, 0.0)
    surv = np.cumprod(1.0 - haz)
    prev = np.concatenate(([1.0], surv[:-1]))
    jumps = np.where(ds == 1, prev - surv, 0.0)
    weights = np.empty(n)
    weights[order] = jumps
    return weights, float(surv[-1])


def km_quantile_pairs(km: KaplanMeier, n: int):
    """Per-event pairs (u_tilde, t) with u_tilde = F_km(t) - 0.5/n.

    Tied events inside a jump are ordered as if separated infinitesimally,
    which makes the levels strictly increasing and reduces to the plain
    formula for untied data.  Also returns the Greenwood variance of F_km at
    each pair (shared inside a tied group).

    Returns arrays ``(u_tilde, t, greenwood_var)``.
    """
    if km.jump_points.size == 0:
        raise DegenerateSampleError("empty Kaplan-Meier estimate")
    u_list, t_list, v_list = [], [], []
    prev_surv = 1.0
    for t, fv, gv, d, r in zip(
        km.jump_points, km.cdf_values, km.greenwood_var, km.event_counts, km.at_risk
    ):
        if d == 1:
            u_list.append(fv - 0.5 / n)
            t_list.append(t)
            v_list.append(gv)
        else:
            for k in range(1, d + 1):
                surv_k = prev_surv * (r - k) / r
                u_list.append(1.0 - surv_k - 0.5 / n)
                t_list.append(t)
                v_list.append(gv)
        prev_surv = 1.0 - fv
    return np.asarray(u_list), np.asarray(t_list), np.asarray(v_list)


class SemiparametricCdf:
    """Semiempirical cdf H_{n,theta}: indicators for events, truncated model
    cdf terms for censored rows.

    With no censoring it evaluates to the usual empirical cdf exactly.
    Immutable after construction; evaluation is pure.
    """

    def __init__(self, sample: CensoredSample, params: GlgParams):
        self.sample = sample
        self.params = params
        y, delta = sample.y, sample.delta
        self._y_unc = y[delta == 1]
        self._y_cens = y[delta == 0]
        if self._y_cens.size:
            f = np.asarray(glg.cdf_at(self._y_cens, params))
            s = 1.0 - f
            if np.any(s < glg.SURVIVAL_FLOOR):
                raise SurvivalUnderflowError(
                    "H_{n,theta}: censored row with F_theta(y*) at 1"
                )
            self._f_cens = f
            self._s_cens = s
        else:
            self._f_cens = np.empty(0)
            self._s_cens = np.empty(0)
        self._n = sample.n

    def __call__(self, z):
        scalar = np.isscalar(z)
        z = np.atleast_1d(np.asarray(z, dtype=float))
        count = np.searchsorted(np.sort(self._y_unc), z, side="right")
        out = count.astype(float)
        if self._y_cens.size:
            fz = np.asarray(glg.cdf_at(z, self.params))
            num = np.clip(fz[:, None] - self._f_cens[None, :], 0.0, None)
            out += np.sum(num / self._s_cens[None, :], axis=1)
        out /= self._n
        return float(out[0]) if scalar else out

    def quantiles(self, k: int, grid_size: int = 4096) -> np.ndarray:
        """k quantiles of H at levels (j - 0.5)/k, by monotone grid inversion."""
        y, params = self.sample.y, self.params
        lo = min(float(y.min()), params.mu - 9.0 * params.sigma)
        hi = max(float(y.max()), params.mu + 9.0 * params.sigma)
        # extend upward until H is close enough to 1 to cover the top level
        top = 1.0 - 0.5 / k
        for _ in range(60):
            if self(hi) >= top:
                break
            hi += 2.0 * params.sigma
        grid = np.linspace(lo, hi, grid_size)
        hv = self(grid)
        hv = np.maximum.accumulate(hv)
        probs = (np.arange(1, k + 1) - 0.5) / k
        idx = np.searchsorted(hv, probs, side="left")
        idx = np.clip(idx, 1, grid_size - 1)
        h0, h1 = hv[idx - 1], hv[idx]
        g0, g1 = grid[idx - 1], grid[idx]
        w = np.where(h1 > h0, (probs - h0) / np.where(h1 > h0, h1 - h0, 1.0), 0.0)
        return g0 + np.clip(w, 0.0, 1.0) * (g1 - g0)


@lru_cache(maxsize=8)
def gauss_legendre_nodes(n: int):
    """Cached Gauss-Legendre nodes/weights on (0, 1)."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def conditional_score_expectation(
    y_star: float,
    params: GlgParams,
    weight_fn,
    score_fn,
    support: tuple[float, float] | None = None,
    nodes: int = 200,
):
    """E_theta[w(y) * score(y) | y > y_star] by probability-scale quadrature.

    The integral of w*score*f over (y_star, inf), divided by S_theta(y_star),
    is mapped to v = F_theta(y) and integrated with fixed Gauss-Legendre
    nodes.  ``support`` optionally restricts integration to the interval
    where the weight can be nonzero (it must vanish outside), keeping the
    integrand smooth for the quadrature.  ``score_fn`` maps a y-vector to an
    array whose last axis runs over y.
    """
    s_star = float(glg.survival_at(y_star, params))
    if s_star < glg.SURVIVAL_FLOOR:
        raise SurvivalUnderflowError("conditional expectation at S(y*) underflow")
    f_star = float(glg.cdf_at(y_star, params))
    v_lo, v_hi = f_star, 1.0
    s_lo = s_star
    unbounded_above = True
    if support is not None:
        lo, hi = support
        if np.isfinite(lo) and lo > y_star:
            v_lo = max(v_lo, float(glg.cdf_at(lo, params)))
            s_lo = min(s_lo, float(glg.survival_at(lo, params)))
        if np.isfinite(hi):
            v_hi = min(v_hi, float(glg.cdf_at(hi, params)))
            unbounded_above = False
    if v_hi <= v_lo or s_lo <= 0.0:
        probe = np.asarray(score_fn(np.array([y_star])))
        return np.zeros(probe.shape[:-1])
    base, bw = gauss_legendre_nodes(nodes)

    # each piece contributes (evaluation points, node weights incl. Jacobian)
    pieces = []
    if not unbounded_above:
        v = v_lo + (v_hi - v_lo) * base
        v = np.clip(v, 1e-15, 1.0 - 1e-15)
        pieces.append((glg.quantile(v, params), bw * (v_hi - v_lo)))
    else:
        # scores grow without bound toward either tail, but only polynomially
        # on the exponential scale, so map each tail through v = exp(-t) /
        # v = 1 - exp(-t) and integrate the damped smooth integrand
        if v_lo < 0.5:
            t_hi = min(-np.log(max(v_lo, 1e-300)), 700.0)
            t = np.log(2.0) + (t_hi - np.log(2.0)) * base
            vq = np.exp(-t)
            pieces.append(
                (
                    params.mu + params.sigma * glg.quantile_std(vq, params.lam),
                    bw * (t_hi - np.log(2.0)) * vq,
                )
            )
            t0_upper = np.log(2.0)
        else:
            t0_upper = -np.log(s_lo)
        span = 45.0
        t = t0_upper + span * base
        sq = np.exp(-t)
        pieces.append(
            (
                params.mu + params.sigma * glg.quantile_std_sf(sq, params.lam),
                bw * span * sq,
            )
        )
    integral = 0.0
    for yq, wts in pieces:
        w = np.asarray(weight_fn(yq), dtype=float)
        sc = np.asarray(score_fn(yq))
        integral = integral + np.sum(sc * (w * wts), axis=-1)
    return integral / s_star


# ---------------------------------------------------------------------------
# likelihood-scale cdfs
# ---------------------------------------------------------------------------

def likelihood_min(lam: float) -> float:
    """Minimum of l_lam(z) = -log f_lam(z); the mode of f_lam sits at z = 0."""
    return float(glg.neg_log_density(0.0, lam))


def _solve_exp_root(s):
    """Both roots of exp(x) - x = s for s >= 1, by seeded Newton iteration.

    Returns (x_neg, x_pos) with x_neg <= 0 <= x_pos.  Seeds come from the
    quadratic expansion near the minimum and the dominant-term asymptotics;
    twelve damped Newton sweeps reach machine precision on both branches.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s < 1.0 - 1e-12):
        raise NumericError("exp(x) - x = s requires s >= 1")
    s = np.maximum(s, 1.0)
    d = s - 1.0

    x = np.where(d < 1.0, np.sqrt(2.0 * d) + d / 3.0, np.log(s + np.log1p(s)))
    for _ in range(12):
        g = np.exp(x) - x - s
        gp = np.expm1(x)
        x = np.clip(x - g / np.where(gp > 1e-300, gp, 1.0), 0.0, None)
    x_pos = x

    x = np.where(d < 1.0, -np.sqrt(2.0 * d) + d / 3.0, -s + np.exp(-s))
    x = np.minimum(x, 0.0)
    for _ in range(12):
        g = np.exp(x) - x - s
        gp = np.expm1(x)
        x = np.clip(x - g / np.where(gp < -1e-300, gp, -1.0), None, 0.0)
    x_neg = x
    return x_neg, x_pos


def likelihood_residual_bounds(lam: float, t):
    """Solutions c_L < c_U of l_lam(z) = t (t at or above the minimum).

    For t below the minimum of l_lam the interval is empty and (nan, nan) is
    returned entrywise.
    """
    scalar = np.isscalar(t)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    lmin = likelihood_min(lam)
    ok = t >= lmin - 1e-12
    if abs(lam) < glg.LAMBDA_NORMAL_EPS:
        half = np.sqrt(np.clip(2.0 * (t - lmin), 0.0, None))
        c_lo, c_hi = -half, half
    else:
        a = lam ** -2
        c_const = -np.log(abs(lam)) + float(special.gammaln(a)) - a * np.log(a)
        s = np.clip((t - c_const) / a, 1.0, None)
        x_neg, x_pos = _solve_exp_root(s)
        if lam > 0:
            c_lo, c_hi = x_neg / lam, x_pos / lam
        else:
            c_lo, c_hi = x_pos / lam, x_neg / lam
    c_lo = np.where(ok, c_lo, np.nan)
    c_hi = np.where(ok, c_hi, np.nan)
    if scalar:
        return float(c_lo[0]), float(c_hi[0])
    return c_lo, c_hi


def likelihood_cdf_model(lam: float, t):
    """M_lam(t): probability that l_lam(z) <= t under z ~ f_lam.

    Equals F_lam(c_U(t)) - F_lam(c_L(t)); zero below the minimum of l_lam.
    Nondecreasing in t, mapping [min l, inf) onto [0, 1).
    """
    scalar = np.isscalar(t)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    lmin = likelihood_min(lam)
    out = np.zeros_like(t)
    above = t >= lmin
    if np.any(above):
        c_lo, c_hi = likelihood_residual_bounds(lam, t[above])
        out[above] = glg.cdf(np.asarray(c_hi), lam) - glg.cdf(np.asarray(c_lo), lam)
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out


def likelihood_cdf_model_inverse(lam: float, p: float) -> float:
    """t with M_lam(t) = p, for p in (0, 1); bracketed root search."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    from scipy import optimize

    lmin = likelihood_min(lam)
    hi = lmin + 1.0
    for _ in range(200):
        if likelihood_cdf_model(lam, hi) >= p:
            break
        hi = lmin + 2.0 * (hi - lmin)
    else:
        raise NumericError("failed to bracket the model likelihood quantile")
    return float(
        optimize.brentq(
            lambda t: likelihood_cdf_model(lam, t) - p, lmin, hi, rtol=1e-13
        )
    )


def likelihood_cdf_semiempirical(sample: CensoredSample, theta_tilde: GlgParams, t):
    """Semiempirical cdf of the standardized-residual likelihood values.

    Mixes indicators of l(r_i) <= t for events with the conditional
    probability P(l <= t | residual > r_i) under the fitted shape for
    censored rows.
    """
    scalar = np.isscalar(t)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    lam = theta_tilde.lam
    r = theta_tilde.standardize(sample.y)
    r_unc = r[sample.delta == 1]
    r_cens = r[sample.delta == 0]
    l_unc = glg.neg_log_density(r_unc, lam)
    c_lo, c_hi = likelihood_residual_bounds(lam, t)
    out = np.sum(l_unc[None, :] <= t[:, None], axis=1).astype(float)
    if r_cens.size:
        s_cens = np.asarray(glg.survival(r_cens, lam))
        if np.any(s_cens < glg.SURVIVAL_FLOOR):
            raise SurvivalUnderflowError("censored residual with zero survival")
        f_hi = np.where(np.isnan(c_hi), 0.0, np.asarray(glg.cdf(np.nan_to_num(c_hi), lam)))
        f_clo = np.where(np.isnan(c_lo), 1.0, np.asarray(glg.cdf(np.nan_to_num(c_lo), lam)))
        f_r = 1.0 - s_cens
        # cdf is monotone, so cdf(max(c_lo, r)) = max(cdf(c_lo), cdf(r))
        f_lo = np.maximum(f_clo[:, None], f_r[None, :])
        num = np.clip(f_hi[:, None] - f_lo, 0.0, None)
        out += np.sum(num / s_cens[None, :], axis=1)
    out /= sample.n
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out
