"""Detector for the case where both relay channels are known exactly.

The statistic ``T = sum_l Re[mu(l)^H Sigma(l)^{-1} y(l)]`` is linear in the
data and therefore Gaussian under either hypothesis, with variance ``s/2``
and mean ``0`` (H0) or ``s`` (H1), where ``s = sum_l mu^H Sigma^{-1} mu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from ._linalg import herm, solve_hpd
from .errors import ConfigurationError, DegenerateModelError, DomainError
from .signal_model import Hypothesis

__all__ = [
    "PerfectCsiModel",
    "build_model",
    "test_statistic",
    "threshold",
    "log_likelihood_ratio",
    "analytic_pd_pf",
    "pd_at_pf",
    "decide",
    "as_decision",
]


def as_decision(mask):
    """Map a boolean "decide H1" mask to :class:`Hypothesis` (scalar) or an int array."""
    mask = np.asarray(mask)
    if mask.ndim == 0:
        return Hypothesis.H1 if bool(mask) else Hypothesis.H0
    return mask.astype(np.int8)


def frame_columns(y, n_antennas, frame_len):
    """Turn an (..., N, L) frame into per-symbol vectors of shape (..., L, N)."""
    y = np.asarray(y, dtype=complex)
    if y.ndim < 2 or y.shape[-2:] != (n_antennas, frame_len):
        raise ConfigurationError(
            f"frame must have trailing shape (N, L) = {(n_antennas, frame_len)}, got {y.shape}"
        )
    return np.swapaxes(y, -1, -2)


@dataclass(frozen=True)
class PerfectCsiModel:
    """Per-symbol mean ``mu`` (..., L, N), covariance ``sigma`` (..., L, N, N).

    ``weights`` caches ``Sigma^{-1} mu``; ``s_total`` is the frame SNR
    ``sum_l mu^H Sigma^{-1} mu``.
    """

    mu: np.ndarray
    sigma: np.ndarray
    weights: np.ndarray
    s_total: np.ndarray

    @property
    def n_antennas(self):
        return self.mu.shape[-1]

    @property
    def frame_len(self):
        return self.mu.shape[-2]


def _check_channels(g, f):
    g = np.asarray(g, dtype=complex)
    f = np.asarray(f, dtype=complex)
    if g.ndim == 2:
        g = g[None]
    if f.ndim == 1:
        f = f[None]
    if g.shape[-1] != f.shape[-1] or g.shape[-3] != f.shape[-2]:
        raise ConfigurationError(f"incompatible channel shapes g={g.shape}, f={f.shape}")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(f))):
        raise DomainError("channel entries must be finite")
    return g, f


def build_model(g, f, cfg):
    """Assemble the exact Gaussian model for known channels.

    Parameters
    ----------
    g : array_like, shape (..., L, N, M) or (N, M)
        Relay-to-receiver channels.  A 2-D array is a single symbol.
    f : array_like, shape (..., L, M) or (M,)
        Transmitter-to-relay channels.
    cfg : SystemConfig
        Supplies the noise variances and the pilot.
    """
    g, f = _check_channels(g, f)
    l = g.shape[-3]
    pilot = cfg.pilot_array if l == cfg.frame_len else np.ones(l, dtype=complex)
    mu = np.einsum("...lnm,...lm->...ln", g, f) * pilot[:, None]
    n = g.shape[-2]
    sigma = cfg.sigma2_v * (g @ herm(g)) + cfg.sigma2_w * np.eye(n)
    weights = solve_hpd(sigma, mu)
    s_per_symbol = np.real(np.sum(np.conj(mu) * weights, axis=-1))
    return PerfectCsiModel(mu, sigma, weights, np.sum(s_per_symbol, axis=-1))


def test_statistic(model, y_frame):
    """``sum_l Re[mu^H Sigma^{-1} y(l)]`` for frames of shape (..., N, L)."""
    cols = frame_columns(y_frame, model.n_antennas, model.frame_len)
    return np.sum(np.real(np.sum(np.conj(model.weights) * cols, axis=-1)), axis=-1)


def threshold(model, gamma):
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma!r}")
    return math.log(gamma) + 0.5 * model.s_total


def log_likelihood_ratio(model, y_frame):
    """Score ``T - s/2``; comparing it with ``log gamma`` is the decision rule."""
    return test_statistic(model, y_frame) - 0.5 * model.s_total


def _require_signal(s):
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise DegenerateModelError("s_total is zero: hypotheses are indistinguishable")
    return s


def analytic_pd_pf(model, gamma):
    """Closed-form detection and false-alarm probabilities ``(p_d, p_f)``."""
    s = _require_signal(model.s_total)
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma!r}")
    lg = math.log(gamma)
    root = np.sqrt(s)
    # Q(x) = ndtr(-x)
    p_d = ndtr(-math.sqrt(2.0) * (lg - s / 2.0) / root)
    p_f = ndtr(-math.sqrt(2.0) * (lg + s / 2.0) / root)
    return p_d, p_f


def pd_at_pf(s_total, p_f):
    """Detection probability reached at false-alarm rate ``p_f``: ``Q(Q^{-1}(p_f) - sqrt(2 s))``."""
    s = _require_signal(s_total)
    p_f = np.asarray(p_f, dtype=float)
    if np.any((p_f <= 0) | (p_f >= 1)):
        raise DomainError("p_f must lie in (0, 1)")
    return ndtr(np.sqrt(2.0 * s) + ndtri(p_f))


def decide(model, y_frame, gamma):
    """H1 iff the statistic reaches the threshold (ties go to H1)."""
    return as_decision(test_statistic(model, y_frame) >= threshold(model, gamma))
