"""Moment-matched Gaussian detector, product-normal tools and normality checks.

When the relay-to-receiver channels are uncertain the received vector is a sum
of products of Gaussians, which has no closed-form density.  Replacing it by a
Gaussian with the same first two moments gives a dual-Gaussian problem that
the quadratic-form detector already solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from . import partial_csi
from ._linalg import herm, hermitize
from .errors import DomainError, ScenarioError
from .perfect_csi import as_decision
from .signal_model import Hypothesis, sample_frames

__all__ = [
    "MomentMatchedModel",
    "ProductNormalParams",
    "NormalityReport",
    "build_ga_model",
    "ga_decide",
    "ga_log_likelihood_ratio",
    "product_normal_mgf",
    "standardized_product_mgf",
    "product_normal_pdf_central",
    "berry_esseen_third_moment",
    "berry_esseen_bound",
    "normality_diagnostics",
    "standardized_components",
]


@dataclass(frozen=True)
class MomentMatchedModel:
    """First two moments of the received vector under each hypothesis.

    ``mu`` (..., L, N) is the H1 mean (the H0 mean is 0), ``sigma_h0`` and
    ``sigma_h1`` (..., L, N, N) are central covariances and ``b_matrix``
    (..., L, M, M) is the H1 second moment of the relay output.
    ``repaired`` flags batch entries whose H1 covariance needed eigenvalue
    clipping after rounding.  ``dual`` is the equivalent quadratic-form model.
    """

    mu: np.ndarray
    sigma_h0: np.ndarray
    sigma_h1: np.ndarray
    b_matrix: np.ndarray
    repaired: np.ndarray
    dual: partial_csi.DualGaussianModel


def _clip_psd(sigma):
    lam, vec = np.linalg.eigh(sigma)
    bad = lam < 0
    if not np.any(bad):
        return sigma, np.zeros(sigma.shape[:-3], dtype=bool)
    fixed = (vec * np.maximum(lam, 0.0)[..., None, :]) @ herm(vec)
    return hermitize(fixed), np.any(bad, axis=(-2, -1))


def build_ga_model(est, cfg):
    """Moment-matched model for uncertain ``G`` and ``F``.

    Parameters
    ----------
    est : ChannelEstimates
        Estimates with shapes (..., L, N, M) and (..., L, M).
    cfg : SystemConfig
        Needs ``sigma2_g > 0`` or ``sigma2_f > 0``.

    Notes
    -----
    With ``R = F s + V`` the relay output and ``B = E[R R^H]``,

    * H0: ``sigma2_v (G_bar G_bar^H + M sigma2_g I) + sigma2_w I``
    * H1: ``sigma2_g tr(B) I + G_bar (B - R_bar R_bar^H) G_bar^H + sigma2_w I``

    where ``R_bar = F_bar s``.
    """
    if cfg.sigma2_g == 0 and cfg.sigma2_f == 0:
        raise ScenarioError("moment matching needs sigma2_g > 0 or sigma2_f > 0")
    est.check(cfg)
    g_bar, f_bar = est.g_bar, est.f_bar
    n, m = cfg.n_antennas, cfg.n_relays
    pilot = cfg.pilot_array
    eye_n = np.eye(n)
    eye_m = np.eye(m)

    r_bar = f_bar * pilot[:, None]
    mu = np.einsum("...lnm,...lm->...ln", g_bar, r_bar)
    relay_var = (cfg.sigma2_v + cfg.sigma2_f * np.abs(pilot) ** 2)[:, None, None]
    b = relay_var * eye_m + r_bar[..., :, None] * np.conj(r_bar[..., None, :])
    ggh = g_bar @ herm(g_bar)

    sigma_h0 = cfg.sigma2_v * (ggh + m * cfg.sigma2_g * eye_n) + cfg.sigma2_w * eye_n
    trace_b = np.real(np.trace(b, axis1=-2, axis2=-1))[..., None, None]
    sigma_h1 = cfg.sigma2_g * trace_b * eye_n + relay_var * ggh + cfg.sigma2_w * eye_n
    sigma_h1, repaired = _clip_psd(hermitize(sigma_h1))
    dual = partial_csi.dual_model_from_moments(mu, sigma_h0, sigma_h1)
    return MomentMatchedModel(mu, hermitize(sigma_h0), sigma_h1, b, repaired, dual)


def ga_log_likelihood_ratio(model, y_frame):
    return partial_csi.log_likelihood_ratio(model.dual, y_frame)


def ga_decide(model, y_frame, gamma):
    """Quadratic-form decision on the moment-matched Gaussians.

    Returns
    -------
    decision, statistic, threshold
    """
    stat = partial_csi.test_statistic(model.dual, y_frame)
    thr = partial_csi.threshold(model.dual, gamma)
    return as_decision(stat >= thr), stat, thr


@dataclass(frozen=True)
class ProductNormalParams:
    """``X ~ N(rho_x sigma_x, sigma_x^2)`` and ``Y ~ N(rho_y sigma_y, sigma_y^2)``."""

    rho_x: float
    rho_y: float
    sigma_x: float = 1.0
    sigma_y: float = 1.0

    def __post_init__(self):
        vals = (self.rho_x, self.rho_y, self.sigma_x, self.sigma_y)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError("product-normal parameters must be finite")
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise DomainError("scales must be positive")

    @property
    def mean(self):
        """Mean of the normalised product ``XY / (sigma_x sigma_y)``."""
        return self.rho_x * self.rho_y

    @property
    def std(self):
        return math.sqrt(1.0 + self.rho_x**2 + self.rho_y**2)


def product_normal_mgf(params, t):
    """MGF of ``Z = XY / (sigma_x sigma_y)``, valid for ``|t| < 1``."""
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) >= 1):
        raise DomainError("the product-normal MGF exists only for |t| < 1")
    rx, ry = params.rho_x, params.rho_y
    one = 1.0 - t**2
    val = np.exp(((rx**2 + ry**2) * t**2 + 2.0 * rx * ry * t) / (2.0 * one)) / np.sqrt(one)
    return val if val.ndim else float(val)


def standardized_product_mgf(params, t):
    """MGF of ``(Z - E Z) / sd(Z)``; tends to ``exp(t^2/2)`` as either ``rho`` grows."""
    t = np.asarray(t, dtype=float)
    sd = params.std
    return np.exp(-params.mean * t / sd) * product_normal_mgf(params, t / sd)


def product_normal_pdf_central(z, sigma_x, sigma_y):
    """Density of ``XY`` for zero-mean normals: ``K0(|z|/(sx sy)) / (pi sx sy)``.

    Returns ``inf`` at ``z = 0`` where the density has a log singularity.
    """
    if sigma_x <= 0 or sigma_y <= 0:
        raise DomainError("scales must be positive")
    z = np.abs(np.asarray(z, dtype=float))
    scale = sigma_x * sigma_y
    with np.errstate(divide="ignore"):
        val = np.where(z > 0, special.k0(z / scale) / (math.pi * scale), np.inf)
    return val if val.ndim else float(val)


def berry_esseen_third_moment(n_antennas):
    """``E||X||^3`` for a standard normal vector in ``n_antennas`` dimensions."""
    n = int(n_antennas)
    if n < 1:
        raise DomainError("n_antennas must be positive")
    return 2.0 * math.sqrt(2.0) * math.exp(math.lgamma((n + 3) / 2.0) - math.lgamma(n / 2.0))


def berry_esseen_bound(n_antennas, n_relays):
    """Multivariate Berry-Esseen bound ``400 N^{1/4} E||X||^3 / sqrt(M)`` over convex sets."""
    if int(n_relays) < 1:
        raise DomainError("n_relays must be positive")
    n = int(n_antennas)
    return 400.0 * n**0.25 * berry_esseen_third_moment(n) / math.sqrt(int(n_relays))


@dataclass(frozen=True)
class NormalityReport:
    """Quantile pairs and Kolmogorov distances per standardized component.

    ``theoretical`` (Q,) are standard normal quantiles, ``empirical`` (Q, K)
    the matching sample quantiles, ``ks`` (K,) the per-component distances.
    """

    probabilities: np.ndarray
    theoretical: np.ndarray
    empirical: np.ndarray
    ks: np.ndarray
    n_samples: int

    @property
    def ks_max(self):
        return float(np.max(self.ks))

    @property
    def ks_mean(self):
        return float(np.mean(self.ks))

    def critical_value(self, level=0.05):
        """Asymptotic one-sample KS critical value at ``level``."""
        return float(stats.kstwobign.isf(level)) / math.sqrt(self.n_samples)

    def to_text(self, delimiter=","):
        k = self.empirical.shape[1]
        header = delimiter.join(["probability", "normal_quantile"] + [f"component_{i}" for i in range(k)])
        lines = [header]
        for p, q, row in zip(self.probabilities, self.theoretical, self.empirical):
            lines.append(delimiter.join(f"{v:.6g}" for v in (p, q, *row)))
        return "\n".join(lines) + "\n"


def normality_diagnostics(samples, n_quantiles=99):
    """Compare standardized samples (n, K) against the standard normal."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 1000:
        raise DomainError(f"normality diagnostics need at least 1000 samples, got {n}")
    probs = (np.arange(1, n_quantiles + 1) - 0.5) / n_quantiles
    theo = stats.norm.ppf(probs)
    emp = np.quantile(x, probs, axis=0)
    xs = np.sort(x, axis=0)
    cdf = special.ndtr(xs)
    i = np.arange(1, n + 1)[:, None]
    ks = np.max(np.maximum(i / n - cdf, cdf - (i - 1) / n), axis=0)
    return NormalityReport(probs, theo, emp, ks, n)


def standardized_components(cfg, est, hypothesis, n_samples, rng):
    """Sample received frames and standardize every real coordinate by the GA moments.

    Real and imaginary parts of each received entry are centred on the GA mean
    and scaled by ``sqrt(Sigma_nn / 2)``.  Returns an array (n_samples, 2 N L).
    ``est`` must be unbatched; it is broadcast over the samples.
    """
    hyp = Hypothesis.parse(hypothesis)
    model = build_ga_model(est, cfg)
    batch = type(est)(
        np.broadcast_to(est.g_bar, (n_samples,) + est.g_bar.shape),
        np.broadcast_to(est.f_bar, (n_samples,) + est.f_bar.shape),
    )
    y = np.swapaxes(sample_frames(cfg, batch, hyp, rng).y, -1, -2)  # (n, L, N)
    if hyp == Hypothesis.H1:
        mean, sigma = model.mu, model.sigma_h1
    else:
        mean, sigma = np.zeros_like(model.mu), model.sigma_h0
    scale = np.sqrt(np.real(np.diagonal(sigma, axis1=-2, axis2=-1)) / 2.0)
    z = (y - mean) / scale
    return np.concatenate([z.real.reshape(n_samples, -1), z.imag.reshape(n_samples, -1)], axis=1)
