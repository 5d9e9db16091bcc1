"""Truncated maximum likelihood: adaptive cutoff, weights, and Newton steps.

The estimator rejects observations whose negative log-likelihood under an
initial robust fit lands beyond an adaptively chosen threshold, then takes
one or two Newton-Raphson steps on weighted likelihood equations whose right
side removes the truncation bias.  With the cutoff disabled the equations
collapse to plain maximum likelihood.

The internal engine works on the stacked parameter vector
(mu, sigma, lam, beta_1..beta_p) so the regression module can reuse it; the
public functions here expose the no-covariate surface.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, asdict

import numpy as np

from . import glg
from .censored import (
    CensoredSample,
    gauss_legendre_nodes,
    likelihood_cdf_model,
    likelihood_cdf_model_inverse,
    likelihood_cdf_semiempirical,
    likelihood_min,
    likelihood_residual_bounds,
)
from .errors import DegenerateSampleError, SingularJacobianError, SurvivalUnderflowError
from .glg import GlgParams
from .report import EstimateReport, attach_covariance, params_dict
from .scales import rho_tukey

__all__ = [
    "CutoffResult",
    "truncated_cdf",
    "compute_cutoff",
    "tml_weight",
    "tml_rhs_h",
    "tml_equations_residual",
    "fit_1tml",
    "fit_2tml",
    "sandwich_covariance",
]

_QUAD_NODES = 200
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class CutoffResult:
    """Adaptive truncation state on the likelihood scale.

    ``phi_star`` is the likelihood-scale cutoff (may be +inf, meaning no
    rejection; then ``theta_star`` = 0).  ``c_lo``/``c_hi`` are the
    standardized-residual bounds solving l(z) = phi_star, and ``t_lo``/
    ``t_hi`` their data-scale counterparts under the initial fit.
    """

    epsilon: float
    phi_star: float
    theta_star: float
    c_lo: float
    c_hi: float
    t_lo: float
    t_hi: float
    t_eps: float

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def rejects(self) -> bool:
        return self.theta_star > 0.0


def truncated_cdf(mn_fn, phi: float, t):
    """Cdf truncated at phi: Mn(t)/Mn(phi) below phi, 1 above.

    ``mn_fn`` maps points to cdf values.  Undefined when Mn(phi) = 0.
    """
    denom = float(mn_fn(phi))
    if denom <= 0.0:
        raise ValueError("truncated cdf undefined: Mn(phi) = 0")
    scalar = np.isscalar(t)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    vals = np.minimum(np.asarray(mn_fn(t), dtype=float) / denom, 1.0)
    out = np.where(t > phi, 1.0, vals)
    return float(out[0]) if scalar else out


def compute_cutoff(
    sample: CensoredSample,
    theta_tilde: GlgParams,
    epsilon: float = 0.01,
    n_grid: int = 512,
) -> CutoffResult:
    """Likelihood-scale cutoff phi* comparing empirical and model tails.

    phi* is the largest phi such that the phi-truncated semiempirical
    likelihood cdf dominates the model likelihood cdf on the tail
    [M^-1(1-epsilon), inf).  Equivalently, the largest phi with
    Mn(phi) <= inf over the tail of Mn(t)/M(t); the search runs over the
    observed likelihood values joined with an n_grid-point grid.  When no
    uncensored observation reaches the tail threshold there is nothing to
    reject and phi* = +inf (theta* = 0).
    """
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    sample.require_events()
    lam = theta_tilde.lam
    t_eps = likelihood_cdf_model_inverse(lam, 1.0 - epsilon)
    r = theta_tilde.standardize(sample.y)
    l_unc = np.asarray(glg.neg_log_density(r[sample.delta == 1], lam))
    l_unc = l_unc[np.isfinite(l_unc)]
    if l_unc.size == 0:
        raise DegenerateSampleError("no finite likelihood values in the sample")
    l_max = float(l_unc.max())

    def _no_rejection() -> CutoffResult:
        return CutoffResult(
            epsilon=epsilon,
            phi_star=np.inf,
            theta_star=0.0,
            c_lo=-np.inf,
            c_hi=np.inf,
            t_lo=-np.inf,
            t_hi=np.inf,
            t_eps=t_eps,
        )

    if l_max < t_eps:
        return _no_rejection()

    # candidate grid: observed likelihood values plus uniform fill of the
    # tail, extended a little beyond the data so the all-clear case is
    # recognizable
    t_far = likelihood_cdf_model_inverse(lam, 1.0 - 1e-6)
    grid = np.concatenate(
        [
            l_unc[l_unc >= t_eps],
            np.linspace(t_eps, l_max, n_grid),
            np.linspace(l_max, max(t_far, l_max + 1e-9), 65)[1:],
        ]
    )
    grid = np.unique(grid)
    mn = likelihood_cdf_semiempirical(sample, theta_tilde, grid)
    mm = likelihood_cdf_model(lam, grid)
    ratio = np.where(mm > 0, mn / np.where(mm > 0, mm, 1.0), np.inf)
    prefix_inf = np.minimum.accumulate(ratio)
    feasible = mn <= prefix_inf + 1e-12
    if feasible[-1]:
        return _no_rejection()
    if not feasible[0]:
        # even the smallest tail candidate fails; clamp at the tail threshold
        phi_star = float(grid[0])
    else:
        phi_star = float(grid[np.max(np.nonzero(feasible)[0])])
    c_lo, c_hi = likelihood_residual_bounds(lam, phi_star)
    return CutoffResult(
        epsilon=epsilon,
        phi_star=phi_star,
        theta_star=1.0 / phi_star if phi_star > 0 else np.inf,
        c_lo=float(c_lo),
        c_hi=float(c_hi),
        t_lo=theta_tilde.mu + theta_tilde.sigma * float(c_lo),
        t_hi=theta_tilde.mu + theta_tilde.sigma * float(c_hi),
        t_eps=t_eps,
    )


def _weight_std(u, lam_tilde: float, cutoff: CutoffResult, c_w: float):
    """Truncation weight as a function of the standardized residual."""
    u = np.asarray(u, dtype=float)
    if not cutoff.rejects:
        return np.ones_like(u)
    if c_w == 0.0:
        return ((u >= cutoff.c_lo) & (u <= cutoff.c_hi)).astype(float)
    z = np.asarray(glg.neg_log_density(u, lam_tilde)) - cutoff.phi_star
    return np.where(z <= 0.0, rho_tukey(z, c_w), 0.0)


def tml_weight(y, theta_tilde: GlgParams, cutoff: CutoffResult, c_w: float = 0.0):
    """Observation weight in [0, 1].

    Hard rejection (indicator of [t_lo, t_hi]) at c_w = 0; a smooth bisquare
    ramp in the likelihood exceedance for c_w > 0.  All weights are 1 when
    the cutoff rejects nothing (theta* = 0).
    """
    scalar = np.isscalar(y)
    u = np.atleast_1d(theta_tilde.standardize(y))
    w = _weight_std(u, theta_tilde.lam, cutoff, c_w)
    return float(w[0]) if scalar else w


# ---------------------------------------------------------------------------
# stacked-parameter engine (shared with the regression module)
# ---------------------------------------------------------------------------

def _split(gamma: np.ndarray):
    mu, sigma, lam = float(gamma[0]), float(gamma[1]), float(gamma[2])
    beta = np.asarray(gamma[3:], dtype=float)
    return mu, sigma, lam, beta


def _locations(gamma: np.ndarray, x: np.ndarray | None, n: int) -> np.ndarray:
    mu, _, _, beta = _split(gamma)
    if x is None or beta.size == 0:
        return np.full(n, mu)
    return mu + x @ beta


def _scores_matrix(y: np.ndarray, x: np.ndarray | None, gamma: np.ndarray) -> np.ndarray:
    """Uncensored score vectors, shape (q, n)."""
    _, sigma, lam, beta = _split(gamma)
    loc = _locations(gamma, x, y.size)
    u = (y - loc) / sigma
    xi_u = np.asarray(glg.xi(u, lam))
    d1 = xi_u / sigma
    d2 = (xi_u * u + 1.0) / sigma
    d3 = np.asarray(glg.psi(u, lam))
    rows = [d1, d2, d3]
    if x is not None and beta.size:
        for k in range(x.shape[1]):
            rows.append(x[:, k] * d1)
    return np.stack(rows)


def _scores_censored_matrix(y: np.ndarray, x: np.ndarray | None, gamma: np.ndarray) -> np.ndarray:
    """Censored score vectors s, shape (q, n); raises on survival underflow."""
    _, sigma, lam, beta = _split(gamma)
    loc = _locations(gamma, x, y.size)
    u = (y - loc) / sigma
    s = np.asarray(glg.survival(u, lam))
    if np.any(s < glg.SURVIVAL_FLOOR):
        raise SurvivalUnderflowError("survival underflow on a censored row")
    f = np.asarray(glg.density(u, lam))
    s1 = -f / (sigma * s)
    s2 = s1 * u
    s3 = np.asarray(glg.cdf_lambda_derivative(u, lam)) / s
    rows = [s1, s2, s3]
    if x is not None and beta.size:
        for k in range(x.shape[1]):
            rows.append(x[:, k] * s1)
    return np.stack(rows)


def _jacobian_matrix_uncensored(
    y: np.ndarray, x: np.ndarray | None, gamma: np.ndarray
) -> np.ndarray:
    """Per-row gradient of the uncensored score, shape (n, q, q)."""
    _, sigma, lam, beta = _split(gamma)
    loc = _locations(gamma, x, y.size)
    core = glg.score_jacobian_uncensored(y - loc + 0.0, GlgParams(0.0, sigma, lam))
    if x is None or beta.size == 0:
        return core
    n, p = x.shape
    q = 3 + p
    g = np.zeros((n, q, q))
    g[:, :3, :3] = core
    for k in range(p):
        g[:, :3, 3 + k] = core[:, :, 0] * x[:, k][:, None]
        g[:, 3 + k, :3] = core[:, 0, :] * x[:, k][:, None]
        for j in range(p):
            g[:, 3 + k, 3 + j] = core[:, 0, 0] * x[:, k] * x[:, j]
    return g


def _eta_censored(
    gamma: np.ndarray,
    y_cens: np.ndarray,
    x_cens: np.ndarray | None,
    tilde: np.ndarray,
    cutoff: CutoffResult,
    c_w: float,
    nodes: int = _QUAD_NODES,
) -> np.ndarray:
    """Conditional expectations E[w d | y > y*] per censored row, shape (q, nc).

    The integration runs on the probability scale of the current gamma,
    restricted to the weight support [t_lo, t_hi] of the initial fit (the
    weight function is smooth inside it).  With no rejection the analytic
    censored score is used directly.
    """
    nc = y_cens.size
    if nc == 0:
        q = 3 + (0 if x_cens is None else x_cens.shape[1])
        return np.zeros((q, 0))
    if not cutoff.rejects:
        return _scores_censored_matrix(y_cens, x_cens, gamma)
    mu_t, sig_t, lam_t, _ = _split(tilde)
    _, sigma, lam, _ = _split(gamma)
    loc_tilde = _locations(tilde, x_cens, nc)
    loc_cur = _locations(gamma, x_cens, nc)
    q = 3 + (0 if x_cens is None else x_cens.shape[1])

    u_star = (y_cens - loc_cur) / sigma
    s_star = np.asarray(glg.survival(u_star, lam))
    if np.any(s_star < glg.SURVIVAL_FLOOR):
        raise SurvivalUnderflowError("survival underflow on a censored row")
    # the weight vanishes outside [t_lo, t_hi] of the initial fit, so the
    # integral lives on [max(y*, t_lo), t_hi]; nodes are placed in the data
    # scale with the density as part of the integrand (equivalent to the
    # probability-scale form but without a quantile inversion per node)
    y_lo = np.maximum(y_cens, loc_tilde + sig_t * cutoff.c_lo)
    y_hi = loc_tilde + sig_t * cutoff.c_hi
    width = np.clip(y_hi - y_lo, 0.0, None)
    live = width > 0.0
    out = np.zeros((q, nc))
    if not np.any(live):
        return out
    base, bw = gauss_legendre_nodes(nodes)
    yl = y_lo[live][:, None]
    yw = width[live][:, None]
    y_nodes = yl + yw * base[None, :]
    u_nodes = (y_nodes - loc_cur[live][:, None]) / sigma
    u_til = (y_nodes - loc_tilde[live][:, None]) / sig_t
    w = _weight_std(u_til, lam_t, cutoff, c_w)
    dens = np.asarray(glg.density(u_nodes, lam)) / sigma

    xi_u = np.asarray(glg.xi(u_nodes, lam))
    d1 = xi_u / sigma
    d2 = (xi_u * u_nodes + 1.0) / sigma
    d3 = np.asarray(glg.psi(u_nodes, lam))
    wb = w * dens * bw[None, :]
    vals = [np.sum(d1 * wb, axis=1), np.sum(d2 * wb, axis=1), np.sum(d3 * wb, axis=1)]
    if x_cens is not None and x_cens.shape[1]:
        for k in range(x_cens.shape[1]):
            vals.append(x_cens[live][:, k] * vals[0])
    stacked = np.stack(vals) * (yw[:, 0] / s_star[live])[None, :]
    out[:, live] = stacked
    return out


def _eta_all(
    gamma: np.ndarray,
    sample: CensoredSample,
    x: np.ndarray | None,
    tilde: np.ndarray,
    cutoff: CutoffResult,
    c_w: float,
) -> np.ndarray:
    """Per-row eta vectors (weighted scores / conditional expectations), (q, n)."""
    y, delta = sample.y, sample.delta
    unc = delta == 1
    n = y.size
    q = 3 + (0 if x is None else x.shape[1])
    eta = np.zeros((q, n))
    if np.any(unc):
        mu_t, sig_t, lam_t, _ = _split(tilde)
        loc_tilde = _locations(tilde, None if x is None else x[unc], int(unc.sum()))
        w_unc = _weight_std((y[unc] - loc_tilde) / sig_t, lam_t, cutoff, c_w)
        eta[:, unc] = _scores_matrix(y[unc], None if x is None else x[unc], gamma) * w_unc
    if np.any(~unc):
        eta[:, ~unc] = _eta_censored(
            gamma, y[~unc], None if x is None else x[~unc], tilde, cutoff, c_w
        )
    return eta


def _u_mean(gamma, sample, x, tilde, cutoff, c_w) -> np.ndarray:
    return _eta_all(gamma, sample, x, tilde, cutoff, c_w).mean(axis=1)


def _h_vector(
    tilde: np.ndarray,
    x: np.ndarray | None,
    cutoff: CutoffResult,
    c_w: float,
    nodes: int = _QUAD_NODES,
) -> np.ndarray:
    """Bias-correcting right side: expectation of the weighted score under the
    fitted model, written in the same parameterization as the score vector.

    Zero exactly when nothing is rejected.  For slope components the shared
    standardized expectation is scaled by the covariate means.
    """
    q = 3 + (0 if x is None else x.shape[1])
    if not cutoff.rejects:
        return np.zeros(q)
    mu_t, sig_t, lam_t, _ = _split(tilde)
    v_lo = float(glg.cdf(cutoff.c_lo, lam_t))
    v_hi = float(glg.cdf(cutoff.c_hi, lam_t))
    base, bw = gauss_legendre_nodes(nodes)
    v = np.clip(v_lo + (v_hi - v_lo) * base, 1e-15, 1.0 - 1e-15)
    u = np.asarray(glg.quantile_std(v, lam_t))
    w = _weight_std(u, lam_t, cutoff, c_w)
    xi_u = np.asarray(glg.xi(u, lam_t))
    psi_u = np.asarray(glg.psi(u, lam_t))
    wb = w * bw * (v_hi - v_lo)
    h1s = float(np.sum(xi_u * wb))
    h2s = float(np.sum((xi_u * u + 1.0) * wb))
    h3s = float(np.sum(psi_u * wb))
    h = [h1s / sig_t, h2s / sig_t, h3s]
    if x is not None and x.shape[1]:
        xbar = x.mean(axis=0)
        h.extend(h1s / sig_t * xbar)
    return np.asarray(h)


def _jacobian(
    tilde: np.ndarray,
    sample: CensoredSample,
    x: np.ndarray | None,
    cutoff: CutoffResult,
    c_w: float,
    at: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient of the estimating function u(gamma) at ``at`` (default: tilde).

    Uncensored rows contribute the analytic score gradients; censored rows a
    central finite difference of their conditional-expectation block, step
    1e-5 * max(1, |gamma_k|).
    """
    gamma0 = tilde if at is None else at
    y, delta = sample.y, sample.delta
    unc = delta == 1
    n = y.size
    q = gamma0.size
    jac = np.zeros((q, q))
    mu_t, sig_t, lam_t, _ = _split(tilde)
    if np.any(unc):
        xu = None if x is None else x[unc]
        loc_tilde = _locations(tilde, xu, int(unc.sum()))
        w_unc = _weight_std((y[unc] - loc_tilde) / sig_t, lam_t, cutoff, c_w)
        g = _jacobian_matrix_uncensored(y[unc], xu, gamma0)
        jac += np.einsum("n,nij->ij", w_unc, g) / n
    if np.any(~unc):
        yc = y[~unc]
        xc = None if x is None else x[~unc]
        for k in range(q):
            h = 1e-5 * max(1.0, abs(gamma0[k]))
            gp = gamma0.copy()
            gp[k] += h
            gm = gamma0.copy()
            gm[k] -= h
            up = _eta_censored(gp, yc, xc, tilde, cutoff, c_w).sum(axis=1)
            dn = _eta_censored(gm, yc, xc, tilde, cutoff, c_w).sum(axis=1)
            jac[:, k] += (up - dn) / (2.0 * h * n)
    return jac


def _newton_step(gamma, jac, residual_vec):
    """Damped Newton update keeping sigma positive; returns (new, step, flags)."""
    cond = np.linalg.cond(jac)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularJacobianError(f"Jacobian condition number {cond:.3g}")
    step = np.linalg.solve(jac, residual_vec)
    damped = False
    scale = 1.0
    for _ in range(60):
        cand = gamma - scale * step
        if cand[1] > 0:
            break
        scale *= 0.5
        damped = True
    else:
        raise SingularJacobianError("could not keep sigma positive along the step")
    return gamma - scale * step, scale * step, damped


def _tml_machine(sample, x, tilde_vec, cutoff, c_w):
    u = _u_mean(tilde_vec, sample, x, tilde_vec, cutoff, c_w)
    h = _h_vector(tilde_vec, x, cutoff, c_w)
    jac = _jacobian(tilde_vec, sample, x, cutoff, c_w)
    new, step, damped = _newton_step(tilde_vec, jac, u - h)
    return new, {"residual": u - h, "jacobian": jac, "step": step, "damped": damped}


def _sandwich(gamma_hat, sample, x, cutoff, c_w):
    """Covariance of the estimate: J^-1 Cov(eta) J^-T / n at the final fit."""
    eta = _eta_all(gamma_hat, sample, x, gamma_hat, cutoff, c_w)
    center = eta - eta.mean(axis=1, keepdims=True)
    lam_bar = center @ center.T / sample.n
    jac = _jacobian(gamma_hat, sample, x, cutoff, c_w, at=gamma_hat)
    cond = np.linalg.cond(jac)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularJacobianError(f"sandwich Jacobian condition number {cond:.3g}")
    jinv = np.linalg.inv(jac)
    cov = jinv @ lam_bar @ jinv.T / sample.n
    return 0.5 * (cov + cov.T)


# ---------------------------------------------------------------------------
# public no-covariate surface
# ---------------------------------------------------------------------------

def tml_rhs_h(theta_tilde: GlgParams, cutoff: CutoffResult, c_w: float = 0.0) -> np.ndarray:
    """Right-side vector h of the truncated likelihood equations.

    Quadrature of the weighted standardized scores under the fitted shape,
    scaled into the (mu, sigma, lam) parameterization of the score vector;
    exactly zero when theta* = 0.
    """
    return _h_vector(theta_tilde.as_array(), None, cutoff, c_w)


def tml_equations_residual(
    theta: GlgParams,
    theta_tilde: GlgParams,
    sample: CensoredSample,
    cutoff: CutoffResult,
    c_w: float = 0.0,
) -> np.ndarray:
    """u(theta, theta_tilde, theta*) - h: the equations the TML estimator zeroes."""
    sample = sample.without_covariates()
    u = _u_mean(theta.as_array(), sample, None, theta_tilde.as_array(), cutoff, c_w)
    return u - tml_rhs_h(theta_tilde, cutoff, c_w)


def _report_from(
    method: str,
    gamma: np.ndarray,
    sample: CensoredSample,
    tilde_params: GlgParams,
    cutoff: CutoffResult,
    c_w: float,
    diagnostics: dict,
    t0: float,
    with_cov: bool = True,
) -> EstimateReport:
    params = GlgParams(float(gamma[0]), float(gamma[1]), float(gamma[2]))
    weights = tml_weight(sample.y, params, cutoff, c_w)
    report = EstimateReport(
        method=method,
        params=params_dict(params),
        weights=np.asarray(weights, dtype=float),
        cutoff=cutoff.to_dict(),
        convergence=diagnostics,
        initial=params_dict(tilde_params),
        timings={"fit": time.perf_counter() - t0},
    )
    if with_cov:
        cov = _sandwich(gamma, sample, None, cutoff, c_w)
        attach_covariance(report, cov)
    return report


def fit_1tml(
    sample: CensoredSample,
    theta_tilde: GlgParams,
    cutoff: CutoffResult,
    c_w: float = 0.0,
) -> EstimateReport:
    """One Newton-Raphson step on the truncated likelihood equations."""
    t0 = time.perf_counter()
    sample = sample.without_covariates()
    tilde = theta_tilde.as_array()
    gamma1, diag = _tml_machine(sample, None, tilde, cutoff, c_w)
    diagnostics = {
        "converged": True,
        "steps": 1,
        "c_w": c_w,
        "damped": diag["damped"],
        "jacobian": diag["jacobian"],
        "step": diag["step"],
    }
    return _report_from("tml1", gamma1, sample, theta_tilde, cutoff, c_w, diagnostics, t0)


def fit_2tml(
    sample: CensoredSample,
    theta_tilde: GlgParams,
    cutoff: CutoffResult,
    c_w: float = 0.0,
) -> EstimateReport:
    """Two Newton-Raphson steps; the cutoff stays frozen across both.

    The second step re-evaluates weights, right side and Jacobian at the
    first-step estimate.
    """
    t0 = time.perf_counter()
    sample = sample.without_covariates()
    tilde = theta_tilde.as_array()
    gamma1, diag1 = _tml_machine(sample, None, tilde, cutoff, c_w)
    gamma2, diag2 = _tml_machine(sample, None, gamma1, cutoff, c_w)
    diagnostics = {
        "converged": True,
        "steps": 2,
        "c_w": c_w,
        "damped": diag1["damped"] or diag2["damped"],
        "jacobian": diag2["jacobian"],
        "step": diag2["step"],
        "first_step_params": list(map(float, gamma1)),
    }
    return _report_from("tml2", gamma2, sample, theta_tilde, cutoff, c_w, diagnostics, t0)


def sandwich_covariance(report: EstimateReport, sample: CensoredSample) -> np.ndarray:
    """Sandwich covariance of a TML report, recomputed at its final estimate.

    Symmetric positive semidefinite; rows/columns ordered (mu, sigma, lam)
    then slopes.  The covariance is that of the estimate itself (the 1/n is
    included), so standard errors are the diagonal square roots.
    """
    cut = report.cutoff
    if cut is None:
        raise ValueError("report carries no cutoff state")
    cutoff = CutoffResult(**cut)
    c_w = float(report.convergence.get("c_w", 0.0))
    gamma = report.param_array()
    x = sample.x if "beta" in report.params and report.params["beta"] else None
    return _sandwich(gamma, sample, x, cutoff, c_w)
