"""Generalized Laguerre series for weighted sums of non-central chi-square variables.

For ``Q = sum_l alpha_l chi2(nu_l, delta_l)`` the density (``p = nu/2``) or the
distribution function (``p = nu/2 + 1``) is expanded as

    f(t) = t^{p-1} exp(-t / (2 beta)) / ((2 beta)^p Gamma(p))
           * sum_k m_k k! / Gamma(p + k) * L_k^{(p-1)}(p t / (2 beta mu0)),

with ``nu = sum_l nu_l``.  The coefficients obey ``m_k = (1/k) sum_{j<k} m_j d_{k-j}``.
Internally the leading coefficient is kept as a logarithm and the remaining
ones are stored relative to it, which defers overflow for large frames.

Two tuning constants control accuracy: the scale ``beta`` and ``mu0``.  The
CDF coefficients only decay when ``mu0 < p / 2``; the exponential envelope of
the Laguerre polynomials, on the other hand, grows on the tail when ``mu0`` is
small.  :func:`build_series` picks both from a small grid by minimising a
rounding-plus-truncation error estimate unless the caller fixes them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln

from .errors import DomainError, SeriesInstabilityError

__all__ = [
    "DEFAULT_ORDER",
    "LaguerreSeries",
    "laguerre_poly",
    "build_series",
    "eval_cdf",
    "eval_pdf",
    "approx_pd_pf",
    "chernoff_tail",
    "tail_cut",
]

DEFAULT_ORDER = 100
CLAMP_TOL = 1e-6
TAIL_SDS = 10.0
TAIL_EPS = 1e-10
_EPS = np.finfo(float).eps
_CDF_RATIOS = (0.1, 0.2, 0.3, 0.4, 0.45, 0.49)
_PDF_RATIOS = (0.3, 0.5, 0.7, 1.0, 1.5)
_N_BETA = 9


def laguerre_poly(k, alpha, t):
    """Generalized Laguerre polynomial ``L_k^{(alpha)}(t)`` by the three-term recurrence."""
    if int(k) != k or k < 0:
        raise DomainError(f"k must be a nonnegative integer, got {k!r}")
    if not alpha > -1:
        raise DomainError(f"alpha must exceed -1, got {alpha!r}")
    t = np.asarray(t, dtype=float)
    prev = np.zeros_like(t)
    cur = np.ones_like(t)
    for j in range(1, int(k) + 1):
        prev, cur = cur, ((2 * j + alpha - 1 - t) * cur - (j + alpha - 1) * prev) / j
    return cur if cur.ndim else float(cur)


@dataclass(frozen=True)
class LaguerreSeries:
    """Truncated series for the CDF or PDF of a quadratic form.

    ``log_lead`` is ``log m_0`` (CDF) or ``log c_0`` (PDF) and ``scaled`` holds
    ``m_k / m_0``, so the actual coefficients are ``exp(log_lead) * scaled``.
    """

    order: int
    beta: float
    mu0: float
    nu_total: float
    p: float
    target: str
    log_lead: float
    scaled: np.ndarray
    d: np.ndarray
    error_estimate: float = float("nan")
    mean: float = float("nan")
    std: float = float("nan")
    tail_start: float = float("inf")
    tail_cut: float = float("inf")
    spec: object = field(default=None, repr=False, compare=False)

    @property
    def coeffs(self):
        """Unscaled coefficients ``m_0..m_p`` (may overflow to inf for large ``nu``)."""
        with np.errstate(over="ignore"):
            return math.exp(self.log_lead) * self.scaled if self.log_lead < 709 else np.inf * self.scaled

    @property
    def coeffs_cdf(self):
        return self.coeffs if self.target == "cdf" else None

    @property
    def coeffs_pdf(self):
        return self.coeffs if self.target == "pdf" else None


def _coefficients(alpha, delta, nu, order, beta, mu0, cdf):
    """Leading log-coefficient and scaled coefficients for candidate arrays beta, mu0 (C,)."""
    nu_total = float(np.sum(nu))
    p = nu_total / 2.0 + (1.0 if cdf else 0.0)
    beta = np.asarray(beta, dtype=float)[:, None]
    mu0 = np.asarray(mu0, dtype=float)[:, None]
    denom = beta * mu0 + alpha * (p - mu0)
    half_nu = nu / 2.0
    j = np.arange(1, order + 1, dtype=float)

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        denom = np.where(denom > 0, denom, np.nan)
        rho = mu0 * (beta - alpha) / denom
        rho_pow = rho[:, None, :] ** j[None, :, None]                       # (C, order, K)
        rho_pow_m1 = rho[:, None, :] ** (j[None, :, None] - 1.0)
        lin = np.sum(delta * alpha * rho_pow_m1 * (mu0 / denom)[:, None, :] ** 2, axis=-1)
        d = -j * (beta * p / (2.0 * mu0)) * lin + np.sum(half_nu * rho_pow, axis=-1)
        if cdf:
            d = d + (-mu0 / (p - mu0)) ** j
            log_lead = (
                math.log(2.0) + p * math.log(p) + p * np.log(beta[:, 0]) - np.log(p - mu0[:, 0])
                - np.sum(half_nu * np.log(denom), axis=-1)
                - 0.5 * np.sum(delta * alpha * (p - mu0) / denom, axis=-1)
            )
        else:
            log_lead = (
                p * np.log(p / mu0[:, 0])
                - np.sum(half_nu * np.log(denom / (beta * mu0)), axis=-1)
                - 0.5 * np.sum(delta * alpha * (p - mu0) / denom, axis=-1)
            )

        m = np.zeros((beta.shape[0], order + 1))
        m[:, 0] = 1.0
        for k in range(1, order + 1):
            m[:, k] = np.sum(m[:, :k] * d[:, k - 1::-1], axis=-1) / k
    return p, log_lead, m, d


def _error_estimate(p, beta, mu0, log_lead, m, t_max):
    """Rounding plus truncation error proxy for each candidate (C,)."""
    absm = np.abs(m)
    finite = np.all(np.isfinite(absm), axis=-1) & np.isfinite(log_lead)
    absm = np.where(np.isfinite(absm), absm, 0.0)
    k = np.arange(10.0)
    tail_k = absm[:, -10:]
    slope = np.polyfit(k, np.log(tail_k.T + 1e-300), 1)[0]
    ratio = np.exp(slope)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        tail = np.where(ratio < 1.0, tail_k[:, -1] * ratio / (1.0 - ratio), np.inf)
        r = mu0 / p
        base = log_lead - p * np.log(2.0 * beta) - gammaln(p)
        lenv = t_max * (1.0 / (4.0 * beta * r) - 1.0 / (2.0 * beta)) + (p - 1.0) * math.log(t_max) + base
        lenv = np.maximum(lenv, base)
        cost = np.exp(lenv) * (_EPS * np.sum(absm, axis=-1) + tail)
    return np.where(finite & np.isfinite(cost), cost, np.inf)


def build_series(spec, order=DEFAULT_ORDER, beta=None, mu0=None, target="cdf"):
    """Compute the Laguerre coefficients for ``spec`` (a ``QuadraticFormSpec``).

    Parameters
    ----------
    spec : QuadraticFormSpec
        Weights, noncentralities and degrees of freedom.  ``spec.shift`` is
        not part of the series; :func:`approx_pd_pf` applies it.
    order : int
        Truncation order.
    beta, mu0 : float, optional
        Scale and convergence-control parameters.  When either is omitted
        both are chosen automatically from a grid; ``beta`` spans the weight
        range and ``mu0 / p`` a fixed set of ratios.
    target : {"cdf", "pdf"}

    Raises
    ------
    SeriesInstabilityError
        If the coefficient recurrence overflows for the requested parameters.
    """
    if target not in ("cdf", "pdf"):
        raise DomainError(f"target must be 'cdf' or 'pdf', got {target!r}")
    if int(order) != order or order < 1:
        raise DomainError(f"order must be a positive integer, got {order!r}")
    order = int(order)
    cdf = target == "cdf"
    alpha, delta, nu = spec.weights, spec.noncentrality, spec.dof
    p = spec.nu_total / 2.0 + (1.0 if cdf else 0.0)
    mean = float(np.sum(alpha * (nu + delta)))
    std = math.sqrt(float(np.sum(2.0 * alpha**2 * (nu + 2.0 * delta))))
    t_max = mean + TAIL_SDS * std

    if beta is None or mu0 is None:
        ratios = _CDF_RATIOS if cdf else _PDF_RATIOS
        betas = np.geomspace(alpha.min(), alpha.max(), _N_BETA) if alpha.max() > alpha.min() else alpha[:1]
        if beta is not None:
            betas = np.array([float(beta)])
        grid_beta, grid_r = np.meshgrid(betas, ratios, indexing="ij")
        grid_beta, grid_mu0 = grid_beta.ravel(), grid_r.ravel() * p
        if mu0 is not None:
            grid_beta, grid_mu0 = betas, np.full(betas.shape, float(mu0))
    else:
        grid_beta, grid_mu0 = np.array([float(beta)]), np.array([float(mu0)])

    if np.any(grid_beta <= 0) or np.any(grid_mu0 <= 0):
        raise DomainError("beta and mu0 must be positive")
    if cdf and np.any(grid_mu0 >= p):
        raise DomainError(f"the CDF expansion needs mu0 < p = {p}")

    _, log_lead, m, d = _coefficients(alpha, delta, nu, order, grid_beta, grid_mu0, cdf)
    cost = _error_estimate(p, grid_beta, grid_mu0, log_lead, m, t_max)
    if grid_beta.size > 1:
        best = int(np.argmin(cost))
        if not np.isfinite(cost[best]):
            raise SeriesInstabilityError("no candidate (beta, mu0) gives a finite series", k=None)
    else:
        best = 0
        bad = ~np.isfinite(m[0])
        if np.any(bad) or not np.isfinite(log_lead[0]):
            k = int(np.argmax(bad)) if np.any(bad) else 0
            raise SeriesInstabilityError(f"coefficient recurrence overflowed at k={k}", k=k)
    return LaguerreSeries(
        order=order,
        beta=float(grid_beta[best]),
        mu0=float(grid_mu0[best]),
        nu_total=spec.nu_total,
        p=p,
        target=target,
        log_lead=float(log_lead[best]),
        scaled=m[best].copy(),
        d=d[best].copy(),
        error_estimate=float(cost[best]),
        mean=mean,
        std=std,
        tail_start=t_max,
        tail_cut=tail_cut(spec, mean, std),
        spec=spec,
    )


def tail_cut(spec, mean=None, std=None):
    """Point past which ``P(Q >= t) <= TAIL_EPS`` is guaranteed, at least ``mean + 10 std``.

    Uses the Chernoff bound at the fixed exponent ``s = 1 / (4 max alpha)``,
    which can be inverted in closed form.
    """
    alpha, delta, nu = spec.weights, spec.noncentrality, spec.dof
    if mean is None:
        mean, std = spec.mean() - spec.shift, math.sqrt(spec.variance())
    s = 1.0 / (4.0 * alpha.max())
    u = 1.0 - 2.0 * alpha * s
    log_mgf = float(np.sum(-0.5 * nu * np.log(u) + delta * alpha * s / u))
    return max(mean + TAIL_SDS * std, (log_mgf - math.log(TAIL_EPS)) / s)


def chernoff_tail(spec, t):
    """Upper bound ``min_s exp(-s t) E[exp(s Q)]`` on ``P(Q >= t)`` for ``t`` above the mean."""
    alpha, delta, nu = spec.weights, spec.noncentrality, spec.dof
    s_max = 1.0 / (2.0 * alpha.max())

    def log_bound(s, x):
        u = 1.0 - 2.0 * alpha * s
        return -s * x + np.sum(-0.5 * nu * np.log(u) + delta * alpha * s / u)

    out = []
    for x in np.atleast_1d(t):
        res = minimize_scalar(log_bound, bounds=(0.0, s_max * (1 - 1e-12)), args=(x,), method="bounded",
                              options={"xatol": 1e-10 * s_max})
        out.append(min(1.0, math.exp(min(res.fun, 0.0))))
    return np.array(out)


def _evaluate(series, t):
    t = np.asarray(t, dtype=float)
    flat = np.atleast_1d(t).ravel()
    pos = (flat > 0) & (flat <= series.tail_cut)
    out = np.zeros_like(flat)
    tp = flat[pos]
    if tp.size:
        p, beta, mu0 = series.p, series.beta, series.mu0
        a = p - 1.0
        z = p * tp / (2.0 * beta * mu0)
        prev = np.zeros_like(tp)
        cur = np.ones_like(tp)
        total = series.scaled[0] * cur
        for k in range(1, series.order + 1):
            prev, cur = cur, ((2 * k + a - 1 - z) * cur - (k - 1) * prev) / (a + k)
            total = total + series.scaled[k] * cur
        log_w = -tp / (2.0 * beta) + (p - 1.0) * np.log(tp) - p * math.log(2.0 * beta) - gammaln(p)
        with np.errstate(over="ignore", invalid="ignore"):
            out[pos] = np.exp(log_w + series.log_lead) * total
    return out.reshape(t.shape)


def eval_cdf(series, t, return_clamped=False):
    """Series CDF clamped to ``[0, 1]``; zero for ``t <= 0``.

    Far out in the upper tail the truncated series loses accuracy (the
    Laguerre envelope grows exponentially).  Past ``series.tail_start``
    (mean + 10 std) the value is therefore confined to the band
    ``[1 - chernoff_tail(t), 1]`` that must contain the true CDF, and past
    ``series.tail_cut``, where that band is narrower than ``TAIL_EPS``, the
    lower edge is returned.

    With ``return_clamped`` the number of points whose raw value left
    ``[-CLAMP_TOL, 1 + CLAMP_TOL]`` is returned as well.
    """
    if series.target != "cdf":
        raise DomainError("series was built for the PDF")
    raw = _evaluate(series, t)
    tt = np.asarray(t, dtype=float)
    far = tt > series.tail_start
    if np.any(far):
        raw = np.array(raw, dtype=float)
        floor = 1.0 - chernoff_tail(series.spec, tt[far])
        vals = np.where(tt[far] > series.tail_cut, floor, raw[far])
        vals = np.where(np.isfinite(vals), vals, floor)
        raw[far] = np.clip(vals, floor, 1.0)
    n_clamped = int(np.count_nonzero((raw < -CLAMP_TOL) | (raw > 1.0 + CLAMP_TOL)))
    val = np.clip(raw, 0.0, 1.0)
    val = val if val.ndim else float(val)
    return (val, n_clamped) if return_clamped else val


def eval_pdf(series, t):
    """Series density; zero for ``t <= 0`` and past ``series.tail_cut``.

    Between ``tail_start`` and ``tail_cut`` the raw series is returned, negative
    values clipped to 0.
    """
    if series.target != "pdf":
        raise DomainError("series was built for the CDF")
    val = _evaluate(series, t)
    val = np.where(np.asarray(t, dtype=float) > series.tail_start, np.maximum(val, 0.0), val)
    return val if val.ndim else float(val)


def approx_pd_pf(spec_h1, spec_h0, threshold_gamma, order=DEFAULT_ORDER, beta=None, mu0=None):
    """Series estimates ``(p_d, p_f)`` of ``P(T >= threshold)`` under H1 and H0.

    ``threshold_gamma`` may be an array of thresholds; each spec's ``shift``
    is subtracted before the series is evaluated.
    """
    thr = np.asarray(threshold_gamma, dtype=float)
    s1 = build_series(spec_h1, order, beta, mu0, "cdf")
    s0 = build_series(spec_h0, order, beta, mu0, "cdf")
    p_d = 1.0 - np.asarray(eval_cdf(s1, thr - spec_h1.shift))
    p_f = 1.0 - np.asarray(eval_cdf(s0, thr - spec_h0.shift))
    if thr.ndim == 0:
        return float(p_d), float(p_f)
    return p_d, p_f
