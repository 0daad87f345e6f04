"""Batched Hermitian linear algebra helpers (leading axes are batch axes)."""

import numpy as np

from .errors import DomainError


def herm(a):
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def hermitize(a):
    return 0.5 * (a + herm(a))


def cholesky(sigma):
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise DomainError("covariance matrix is not positive definite") from None


def solve_hpd(sigma, b):
    """Solve ``sigma x = b`` for Hermitian positive definite ``sigma``.

    ``b`` may be a vector (..., N) or a matrix (..., N, K).
    """
    chol = cholesky(sigma)
    vec = b.ndim == sigma.ndim - 1
    rhs = b[..., None] if vec else b
    rhs = np.broadcast_to(rhs, np.broadcast_shapes(rhs.shape[:-2], chol.shape[:-2]) + rhs.shape[-2:])
    z = np.linalg.solve(chol, rhs)
    x = np.linalg.solve(herm(chol), z)
    return x[..., 0] if vec else x


def inv_hpd(sigma):
    eye = np.broadcast_to(np.eye(sigma.shape[-1], dtype=complex), sigma.shape)
    return hermitize(solve_hpd(sigma, eye))


def logdet_hpd(sigma):
    chol = cholesky(sigma)
    return 2.0 * np.sum(np.log(np.real(np.diagonal(chol, axis1=-2, axis2=-1))), axis=-1)


def quad_inv(sigma, x):
    """Real quadratic form ``x^H sigma^{-1} x``."""
    chol = cholesky(sigma)
    z = np.linalg.solve(chol, x[..., None])[..., 0]
    return np.sum(np.abs(z) ** 2, axis=-1)


def complex_gaussian_logpdf(y, mean, sigma):
    """Log density of ``CN(mean, sigma)`` at ``y`` (last axis is the vector axis)."""
    n = y.shape[-1]
    return -n * np.log(np.pi) - logdet_hpd(sigma) - quad_inv(sigma, y - mean)
