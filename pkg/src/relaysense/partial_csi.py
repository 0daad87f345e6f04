"""Quadratic-form detector for two Gaussian hypotheses with different covariances.

This covers the case where the relay-to-receiver channels are known and the
transmitter-to-relay channels are only known through an estimate with error
variance ``sigma2_f``.  Under H0 the frame is ``CN(0, Sigma0)`` and under H1 it
is ``CN(mu, Sigma1)`` with ``Sigma1 - Sigma0`` positive semidefinite.  With
``c^H c = Sigma0^{-1} - Sigma1^{-1}`` and ``c^H a = Sigma1^{-1} mu`` the
log likelihood ratio is, up to a constant, ``T = sum_l ||c y(l) + a||^2``.

The same machinery serves the moment-matched detector through
:func:`dual_model_from_moments`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import herm, hermitize, inv_hpd, logdet_hpd, solve_hpd
from .errors import ConfigurationError, DegenerateModelError, DomainError
from .perfect_csi import _check_channels, as_decision, frame_columns
from .signal_model import Hypothesis

__all__ = [
    "DualGaussianModel",
    "QuadraticFormSpec",
    "PRUNE_RTOL",
    "dual_model_from_moments",
    "build_dual_model",
    "test_statistic",
    "threshold",
    "log_likelihood_ratio",
    "whiten_to_quadratic_form",
    "decide",
]

PRUNE_RTOL = 1e-12


@dataclass(frozen=True)
class QuadraticFormSpec:
    """``shift + sum_k alpha_k * chi2(dof_k, noncentrality_k)`` with independent terms."""

    weights: np.ndarray
    noncentrality: np.ndarray
    dof: np.ndarray
    shift: float = 0.0

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        d = np.atleast_1d(np.asarray(self.noncentrality, dtype=float))
        nu = np.atleast_1d(np.asarray(self.dof, dtype=float))
        d = np.broadcast_to(d, w.shape).copy()
        nu = np.broadcast_to(nu, w.shape).copy()
        if w.ndim != 1 or w.size == 0:
            raise DomainError("a quadratic form needs at least one component")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise DomainError("weights must be finite and positive")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise DomainError("noncentralities must be finite and nonnegative")
        if np.any(nu <= 0):
            raise DomainError("degrees of freedom must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "noncentrality", d)
        object.__setattr__(self, "dof", nu)
        object.__setattr__(self, "shift", float(self.shift))

    @property
    def n_components(self):
        return self.weights.size

    @property
    def nu_total(self):
        return float(np.sum(self.dof))

    def mean(self):
        return self.shift + float(np.sum(self.weights * (self.dof + self.noncentrality)))

    def variance(self):
        return float(np.sum(2.0 * self.weights**2 * (self.dof + 2.0 * self.noncentrality)))

    def sample(self, rng, size):
        """Draw ``size`` realisations by brute force."""
        size = (int(size),) if np.isscalar(size) else tuple(size)
        chi = rng.noncentral_chisquare(self.dof, np.maximum(self.noncentrality, 1e-300), size + (self.n_components,))
        return self.shift + chi @ self.weights


@dataclass(frozen=True)
class DualGaussianModel:
    """Gaussian pair ``CN(0, sigma_h0)`` vs ``CN(mu, sigma_h1)`` per symbol.

    Shapes: ``mu`` (..., L, N); ``sigma_h0``, ``sigma_h1``, ``c``, ``c_pinv``
    (..., L, N, N); ``a`` (..., L, N).  ``offset`` (...) collects the
    log-determinant ratio plus ``sum_l (a^H a + mu^H Sigma1^{-1} mu)``, so that
    the decision threshold is ``log gamma + offset``.  ``range_residual`` is
    the part of ``Sigma1^{-1} mu`` outside the range of ``c``; it is zero up
    to rounding unless the covariance difference is rank deficient in a way
    that leaves the mean partly unseen by the statistic.
    """

    mu: np.ndarray
    sigma_h0: np.ndarray
    sigma_h1: np.ndarray
    c: np.ndarray
    c_pinv: np.ndarray
    a: np.ndarray
    log_det_ratio: np.ndarray
    offset: np.ndarray
    range_residual: np.ndarray

    @property
    def n_antennas(self):
        return self.mu.shape[-1]

    @property
    def frame_len(self):
        return self.mu.shape[-2]

    @property
    def batch_shape(self):
        return self.mu.shape[:-2]

    def instance(self, index):
        """The unbatched model at batch position ``index``."""
        index = np.index_exp[index]
        return DualGaussianModel(*(np.asarray(getattr(self, name))[index] for name in self.__dataclass_fields__))


def _psd_sqrt(diff):
    lam, vec = np.linalg.eigh(diff)
    top = np.max(lam, axis=(-2, -1), keepdims=True)
    keep = lam > PRUNE_RTOL * np.maximum(top, 0.0)
    if np.any(~np.any(keep, axis=(-2, -1))) or np.any(top <= 0):
        raise DegenerateModelError(
            "covariances coincide under both hypotheses; the quadratic statistic carries no information"
        )
    root = np.where(keep, np.sqrt(np.where(keep, lam, 0.0)), 0.0)
    inv_root = np.where(keep, 1.0 / np.where(keep, root, 1.0), 0.0)
    c = (vec * root[..., None, :]) @ herm(vec)
    c_pinv = (vec * inv_root[..., None, :]) @ herm(vec)
    return hermitize(c), hermitize(c_pinv)


def dual_model_from_moments(mu, sigma_h0, sigma_h1):
    """Assemble a :class:`DualGaussianModel` from explicit per-symbol moments."""
    mu = np.asarray(mu, dtype=complex)
    sigma_h0 = hermitize(np.asarray(sigma_h0, dtype=complex))
    sigma_h1 = hermitize(np.asarray(sigma_h1, dtype=complex))
    if sigma_h0.shape != sigma_h1.shape or sigma_h0.shape[:-1] != mu.shape:
        raise ConfigurationError("mean and covariance shapes are inconsistent")

    inv0 = inv_hpd(sigma_h0)
    inv1 = inv_hpd(sigma_h1)
    # Sigma0^{-1} (Sigma1 - Sigma0) Sigma1^{-1} avoids cancelling two inverses
    diff = hermitize(inv0 @ (sigma_h1 - sigma_h0) @ inv1)
    c, c_pinv = _psd_sqrt(diff)

    b = solve_hpd(sigma_h1, mu)
    a = np.einsum("...ij,...j->...i", c_pinv, b)
    residual = b - np.einsum("...ij,...j->...i", c, a)
    ldr = np.sum(logdet_hpd(sigma_h1) - logdet_hpd(sigma_h0), axis=-1)
    const = np.sum(np.sum(np.abs(a) ** 2, axis=-1) + np.real(np.sum(np.conj(mu) * b, axis=-1)), axis=-1)
    res_norm = np.sqrt(np.sum(np.abs(residual) ** 2, axis=(-2, -1)))
    return DualGaussianModel(mu, sigma_h0, sigma_h1, c, c_pinv, a, ldr, ldr + const, res_norm)


def build_dual_model(g, f_bar, cfg):
    """Exact model for known ``g`` and estimated ``f`` (error variance ``cfg.sigma2_f``).

    Parameters
    ----------
    g : array_like, shape (..., L, N, M) or (N, M)
    f_bar : array_like, shape (..., L, M) or (M,)
    cfg : SystemConfig

    Raises
    ------
    DegenerateModelError
        If ``sigma2_f == 0`` (use the perfect-CSI detector) or if the two
        covariances coincide, e.g. for ``g = 0``.
    """
    if cfg.sigma2_f == 0:
        raise DegenerateModelError("sigma2_f = 0: use the perfect-CSI detector instead")
    g, f_bar = _check_channels(g, f_bar)
    l = g.shape[-3]
    pilot = cfg.pilot_array if l == cfg.frame_len else np.ones(l, dtype=complex)
    n = g.shape[-2]
    mu = np.einsum("...lnm,...lm->...ln", g, f_bar) * pilot[:, None]
    ggh = g @ herm(g)
    eye = np.eye(n)
    sigma_h0 = cfg.sigma2_v * ggh + cfg.sigma2_w * eye
    relay_var = cfg.sigma2_v + cfg.sigma2_f * np.abs(pilot) ** 2
    sigma_h1 = relay_var[:, None, None] * ggh + cfg.sigma2_w * eye
    return dual_model_from_moments(mu, sigma_h0, sigma_h1)


def test_statistic(model, y_frame):
    """``sum_l ||c(l) y(l) + a(l)||^2`` for frames of shape (..., N, L)."""
    cols = frame_columns(y_frame, model.n_antennas, model.frame_len)
    z = np.einsum("...ij,...j->...i", model.c, cols) + model.a
    return np.sum(np.abs(z) ** 2, axis=(-2, -1))


def threshold(model, gamma):
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma!r}")
    return np.log(gamma) + model.offset


def log_likelihood_ratio(model, y_frame):
    """Exact log likelihood ratio of the two Gaussians, ``T - offset``."""
    return test_statistic(model, y_frame) - model.offset


def whiten_to_quadratic_form(model, hypothesis):
    """Express the statistic under ``hypothesis`` as a weighted chi-square sum.

    Each complex whitened coordinate with variance ``lam`` becomes two real
    components of one degree of freedom, weight ``lam / 2`` and noncentrality
    ``2 (Re m)^2 / lam`` resp. ``2 (Im m)^2 / lam``.  Directions with negligible
    variance are deterministic and go into the ``shift``.
    """
    if model.batch_shape != ():
        raise ConfigurationError("whiten a single instance; use model.instance(i) for batches")
    hyp = Hypothesis.parse(hypothesis)
    if hyp == Hypothesis.H1:
        sigma = model.sigma_h1
        mean = np.einsum("...ij,...j->...i", model.c, model.mu) + model.a
    else:
        sigma = model.sigma_h0
        mean = model.a
    cov = hermitize(model.c @ sigma @ herm(model.c))
    lam, vec = np.linalg.eigh(cov)
    m = np.einsum("...ji,...j->...i", np.conj(vec), mean)
    keep = lam > PRUNE_RTOL * np.max(lam)
    shift = float(np.sum(np.abs(m[~keep]) ** 2))
    lam_k = lam[keep]
    m_k = m[keep]
    weights = np.repeat(lam_k / 2.0, 2)
    delta = np.stack([2.0 * m_k.real**2 / lam_k, 2.0 * m_k.imag**2 / lam_k], axis=-1).ravel()
    return QuadraticFormSpec(weights, delta, np.ones_like(weights), shift)


def decide(model, y_frame, gamma):
    """H1 iff ``T >= Gamma``."""
    return as_decision(test_statistic(model, y_frame) >= threshold(model, gamma))
