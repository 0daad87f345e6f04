"""Marginal likelihood of one received symbol when both relay channels are uncertain.

Per symbol the relay output ``r`` is latent with prior ``CN(r_bar, sigma2_r I)``
and, after averaging over the channel error, ``y | r ~ CN(G_bar r,
(sigma2_g ||r||^2 + sigma2_w) I)``.  The evidence ``p(y) = int p(y|r) p(r) dr``
is approximated by a Laplace expansion around the MAP of

    h(r) = log p(y | r) + log p(r),

and the MAP itself is found by Bayesian EM treating ``G`` as missing data.

All functions accept leading batch axes on ``y``, ``g_bar``, ``r_bar`` and
``sigma2_r``, so many independent problems are solved in lock step.  The
Hessian is taken with respect to the real parameter ``x = [Re r, Im r]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._linalg import herm
from .errors import ConfigurationError, DivergenceError, DomainError, SaddleError
from .perfect_csi import as_decision, frame_columns
from .signal_model import complex_normal

__all__ = [
    "LatentPosteriorProblem",
    "BemState",
    "LaplaceReport",
    "log_joint",
    "gradient",
    "hessian",
    "bem_e_step",
    "bem_m_step",
    "bem_surrogate",
    "bem_solve",
    "newton_polish",
    "laplace_log_evidence",
    "laplace_decide",
]

STATIONARY_RTOL = 1e-4


@dataclass(frozen=True)
class LatentPosteriorProblem:
    """One symbol's latent-relay problem (arrays may carry batch axes).

    ``y`` (..., N), ``g_bar`` (..., N, M), ``r_bar`` (..., M); ``sigma2_r`` is a
    scalar or has the batch shape.  ``sigma2_g`` and ``sigma2_w`` are scalars.
    """

    y: np.ndarray
    g_bar: np.ndarray
    r_bar: np.ndarray
    sigma2_r: np.ndarray
    sigma2_g: float
    sigma2_w: float

    def __post_init__(self):
        y = np.asarray(self.y, dtype=complex)
        g = np.asarray(self.g_bar, dtype=complex)
        r = np.asarray(self.r_bar, dtype=complex)
        s2r = np.asarray(self.sigma2_r, dtype=float)
        if g.shape[-2] != y.shape[-1] or g.shape[-1] != r.shape[-1]:
            raise ConfigurationError(f"inconsistent shapes y={y.shape}, g_bar={g.shape}, r_bar={r.shape}")
        if np.any(s2r <= 0) or self.sigma2_w <= 0 or self.sigma2_g < 0:
            raise DomainError("need sigma2_r > 0, sigma2_w > 0 and sigma2_g >= 0")
        batch = np.broadcast_shapes(y.shape[:-1], g.shape[:-2], r.shape[:-1], s2r.shape)
        n, m = g.shape[-2:]
        object.__setattr__(self, "y", np.broadcast_to(y, batch + (n,)))
        object.__setattr__(self, "g_bar", np.broadcast_to(g, batch + (n, m)))
        object.__setattr__(self, "r_bar", np.broadcast_to(r, batch + (m,)))
        object.__setattr__(self, "sigma2_r", np.broadcast_to(s2r, batch))
        object.__setattr__(self, "sigma2_g", float(self.sigma2_g))
        object.__setattr__(self, "sigma2_w", float(self.sigma2_w))

    @property
    def n_antennas(self):
        return self.g_bar.shape[-2]

    @property
    def n_relays(self):
        return self.g_bar.shape[-1]

    @property
    def batch_shape(self):
        return self.y.shape[:-1]


@dataclass
class BemState:
    """Outcome of :func:`bem_solve` (fields carry the problem's batch shape)."""

    r_hat: np.ndarray
    iteration: np.ndarray
    objective: np.ndarray
    converged: np.ndarray
    history: list = field(default=None, repr=False)


def _norm2(v):
    return np.sum(np.abs(v) ** 2, axis=-1)


def log_joint(problem, r):
    """``h(r) = log CN(y; G_bar r, s(r) I) + log CN(r; r_bar, sigma2_r I)``.

    ``s(r) = sigma2_g ||r||^2 + sigma2_w``.  Every constant is kept, so the
    value is the exact log joint density of ``(y, r)``.
    """
    p = problem
    r = np.asarray(r, dtype=complex)
    n, m = p.n_antennas, p.n_relays
    s = p.sigma2_g * _norm2(r) + p.sigma2_w
    resid = p.y - np.einsum("...nm,...m->...n", p.g_bar, r)
    lik = -n * math.log(math.pi) - n * np.log(s) - _norm2(resid) / s
    prior = -m * np.log(math.pi * p.sigma2_r) - _norm2(r - p.r_bar) / p.sigma2_r
    return lik + prior


def _real_parts(problem, r):
    p = problem
    x = np.concatenate([r.real, r.imag], axis=-1)
    x_bar = np.concatenate([p.r_bar.real, p.r_bar.imag], axis=-1)
    gr, gi = p.g_bar.real, p.g_bar.imag
    a = np.concatenate(
        [np.concatenate([gr, -gi], axis=-1), np.concatenate([gi, gr], axis=-1)], axis=-2
    )
    resid = p.y - np.einsum("...nm,...m->...n", p.g_bar, r)
    e = np.concatenate([resid.real, resid.imag], axis=-1)
    s = p.sigma2_g * np.sum(x**2, axis=-1) + p.sigma2_w
    return x, x_bar, a, e, s


def gradient(problem, r):
    """Gradient of ``h`` with respect to ``x = [Re r, Im r]``, shape (..., 2M)."""
    p = problem
    x, x_bar, a, e, s = _real_parts(p, np.asarray(r, dtype=complex))
    n = p.n_antennas
    q = np.sum(e**2, axis=-1)
    ds = 2.0 * p.sigma2_g * x
    dq = -2.0 * np.einsum("...ij,...i->...j", a, e)
    s_ = s[..., None]
    return -n * ds / s_ - dq / s_ + q[..., None] * ds / s_**2 - 2.0 * (x - x_bar) / p.sigma2_r[..., None]


def hessian(problem, r):
    """Hessian of ``h`` with respect to ``x = [Re r, Im r]``, shape (..., 2M, 2M)."""
    p = problem
    x, _, a, e, s = _real_parts(p, np.asarray(r, dtype=complex))
    n, k = p.n_antennas, x.shape[-1]
    eye = np.eye(k)
    q = np.sum(e**2, axis=-1)[..., None, None]
    s = s[..., None, None]
    ds = 2.0 * p.sigma2_g * x
    d2s = 2.0 * p.sigma2_g * eye
    dq = -2.0 * np.einsum("...ij,...i->...j", a, e)
    d2q = 2.0 * np.swapaxes(a, -1, -2) @ a
    ss = ds[..., :, None] * ds[..., None, :]
    qs = dq[..., :, None] * ds[..., None, :]
    h_log = -n * (d2s / s - ss / s**2)
    h_quad = d2q / s - (qs + np.swapaxes(qs, -1, -2)) / s**2 - q * d2s / s**2 + 2.0 * q * ss / s**3
    return h_log - h_quad - 2.0 * eye / p.sigma2_r[..., None, None]


def bem_e_step(problem, r_hat):
    """Posterior moments of ``G`` given ``y`` and ``r_hat``.

    Returns ``Phi1 = E[G]`` (..., N, M) and ``Phi2 = E[G^H G]`` (..., M, M).
    """
    p = problem
    r = np.asarray(r_hat, dtype=complex)
    if p.sigma2_g == 0:
        return p.g_bar.copy(), herm(p.g_bar) @ p.g_bar
    n, m = p.n_antennas, p.n_relays
    denom = (_norm2(r) + p.sigma2_w / p.sigma2_g)[..., None, None]
    resid = p.y - np.einsum("...nm,...m->...n", p.g_bar, r)
    rrh = r[..., :, None] * np.conj(r[..., None, :])
    phi1 = p.g_bar + resid[..., :, None] * np.conj(r[..., None, :]) / denom
    phi2 = herm(phi1) @ phi1 + n * p.sigma2_g * (np.eye(m) - rrh / denom)
    return phi1, phi2


def bem_m_step(problem, phi1, phi2):
    """Maximiser ``(Phi2 + (sigma2_w/sigma2_r) I)^{-1} (Phi1^H y + r_bar sigma2_w/sigma2_r)``."""
    p = problem
    ratio = (p.sigma2_w / p.sigma2_r)[..., None]
    lhs = phi2 + ratio[..., None] * np.eye(p.n_relays)
    rhs = np.einsum("...nm,...n->...m", np.conj(phi1), p.y) + p.r_bar * ratio
    return np.linalg.solve(lhs, rhs[..., None])[..., 0]


def bem_surrogate(problem, r, phi1, phi2):
    """E-step surrogate ``E_G[log p(y | G, r)] + log p(r)`` up to an r-independent constant."""
    p = problem
    fit = (
        _norm2(p.y)
        - 2.0 * np.real(np.einsum("...m,...nm,...n->...", np.conj(r), np.conj(phi1), p.y))
        + np.real(np.einsum("...i,...ij,...j->...", np.conj(r), phi2, r))
    )
    return -fit / p.sigma2_w - _norm2(r - p.r_bar) / p.sigma2_r


def _solve_from(problem, r0, max_iter, tol, keep_history):
    r = np.array(r0, dtype=complex)
    batch = problem.batch_shape
    iteration = np.zeros(batch, dtype=int)
    active = np.ones(batch, dtype=bool)
    history = [log_joint(problem, r)] if keep_history else None
    for it in range(1, max_iter + 1):
        phi1, phi2 = bem_e_step(problem, r)
        r_new = bem_m_step(problem, phi1, phi2)
        if not np.all(np.isfinite(r_new[active])):
            raise DivergenceError(f"BEM produced a non-finite iterate at iteration {it}", iteration=it)
        step = np.sqrt(_norm2(r_new - r))
        done = step <= tol * (1.0 + np.sqrt(_norm2(r)))
        r = np.where(active[..., None], r_new, r)
        iteration = np.where(active, it, iteration)
        active = active & ~done
        if keep_history:
            history.append(log_joint(problem, r))
        if not np.any(active):
            break
    return r, iteration, ~active, history


def bem_solve(problem, max_iter=50, tol=1e-8, multi_start=False, rng=None, keep_history=False):
    """Iterate E and M steps from ``r_bar`` until the step is below ``tol (1 + ||r||)``.

    With ``multi_start`` four extra starts are drawn from the prior (``rng``
    required) and the start reaching the largest objective wins.
    ``keep_history`` records ``h`` after every iteration (single start only).

    Raises
    ------
    DivergenceError
        If an iterate becomes non-finite.
    """
    if int(max_iter) < 1 or not tol > 0:
        raise DomainError("need max_iter >= 1 and tol > 0")
    starts = [problem.r_bar]
    if multi_start:
        if rng is None:
            raise ConfigurationError("multi_start needs an rng")
        scale = problem.sigma2_r[..., None]
        for _ in range(4):
            starts.append(problem.r_bar + complex_normal(rng, problem.r_bar.shape, scale))
    best = None
    for r0 in starts:
        r, it, conv, hist = _solve_from(problem, r0, int(max_iter), tol, keep_history and len(starts) == 1)
        obj = log_joint(problem, r)
        if best is None:
            best = BemState(r, it, obj, conv, hist)
            continue
        better = obj > best.objective
        best = BemState(
            np.where(better[..., None], r, best.r_hat),
            np.where(better, it, best.iteration),
            np.where(better, obj, best.objective),
            np.where(better, conv, best.converged),
            None,
        )
    return best


def newton_polish(problem, r, max_iter=20):
    """Damped Newton ascent on ``h`` from ``r``; never decreases the objective.

    Used to tighten slow EM fixed points before the Laplace step.  Points
    where ``h`` is not locally concave fall back to a scaled gradient step.
    """
    p = problem
    m = p.n_relays
    r = np.array(r, dtype=complex)
    obj = log_joint(p, r)
    for _ in range(max_iter):
        g = gradient(p, r)
        gnorm = np.sqrt(np.sum(g**2, axis=-1))
        todo = gnorm > 1e-12 * (1.0 + np.sqrt(_norm2(r)))
        if not np.any(todo):
            break
        hmat = hessian(p, r)
        try:
            chol = np.linalg.cholesky(-hmat)
            concave = np.ones(g.shape[:-1], dtype=bool)
        except np.linalg.LinAlgError:
            ev = np.linalg.eigvalsh(-hmat)
            concave = ev[..., 0] > 0
            safe = np.where(concave[..., None, None], -hmat, np.eye(g.shape[-1]))
            chol = np.linalg.cholesky(safe)
        z = np.linalg.solve(chol, g[..., None])
        dx = np.linalg.solve(np.swapaxes(chol, -1, -2), z)[..., 0]
        dx = np.where(concave[..., None], dx, g / (1.0 + gnorm[..., None]))
        dr = dx[..., :m] + 1j * dx[..., m:]
        step = np.ones(g.shape[:-1])
        accepted = np.zeros(g.shape[:-1], dtype=bool)
        for _ in range(30):
            cand = r + step[..., None] * dr
            cand_obj = log_joint(p, cand)
            ok = (cand_obj >= obj) & ~accepted & todo
            r = np.where(ok[..., None], cand, r)
            obj = np.where(ok, cand_obj, obj)
            accepted |= ok
            if np.all(accepted | ~todo):
                break
            step = np.where(accepted, step, step / 2.0)
        if not np.any(accepted):
            break
    return r


def laplace_log_evidence(problem, r_hat, on_saddle="raise"):
    """Laplace estimate ``h(r_hat) + M log(2 pi) - 0.5 log det(-H)`` of ``log p(y)``.

    Parameters
    ----------
    on_saddle : {"raise", "nan"}
        What to do where ``-H`` is not positive definite or ``r_hat`` is not
        stationary (gradient norm above ``1e-4 (1 + ||r_hat||)``).

    Raises
    ------
    SaddleError
        With ``on_saddle="raise"`` when any batch entry is not a local maximum.
    """
    p = problem
    r_hat = np.asarray(r_hat, dtype=complex)
    hmat = hessian(p, r_hat)
    g = gradient(p, r_hat)
    stationary = np.sqrt(np.sum(g**2, axis=-1)) <= STATIONARY_RTOL * (1.0 + np.sqrt(_norm2(r_hat)))
    lam = np.linalg.eigvalsh(-hmat)
    definite = lam[..., 0] > 0
    ok = stationary & definite
    if on_saddle == "raise" and not np.all(ok):
        what = "not negative definite" if not np.all(definite) else "evaluated away from a stationary point"
        raise SaddleError(f"Hessian of the log joint is {what}")
    logdet = np.sum(np.log(np.where(definite[..., None], lam, 1.0)), axis=-1)
    val = log_joint(p, r_hat) + p.n_relays * math.log(2.0 * math.pi) - 0.5 * logdet
    val = np.where(ok, val, np.nan)
    return val if val.ndim else float(val)


@dataclass(frozen=True)
class LaplaceReport:
    """Decision plus diagnostics; unpacks as ``(decision, log_lrt)``.

    ``fallback`` marks frames scored by the moment-matched detector because a
    Laplace step failed under either hypothesis.
    """

    decision: object
    log_lrt: np.ndarray
    fallback: np.ndarray
    n_fallback: int
    max_iterations: int

    def __iter__(self):
        return iter((self.decision, self.log_lrt))


def _symbol_problems(y_cols, est, cfg, hypothesis):
    pilot = cfg.pilot_array
    if int(hypothesis) == 1:
        r_bar = est.f_bar * pilot[:, None]
        sigma2_r = cfg.sigma2_v + cfg.sigma2_f * np.abs(pilot) ** 2
    else:
        r_bar = np.zeros_like(est.f_bar)
        sigma2_r = np.full(cfg.frame_len, cfg.sigma2_v)
    return LatentPosteriorProblem(y_cols, est.g_bar, r_bar, sigma2_r, cfg.sigma2_g, cfg.sigma2_w)


def laplace_scores(y_frame, est, cfg, max_iter=50, tol=1e-8, polish=True):
    """Per-frame Laplace log likelihood ratios; NaN where a Laplace step failed.

    Returns ``(log_lrt, max_iterations)``.
    """
    est.check(cfg)
    cols = frame_columns(y_frame, cfg.n_antennas, cfg.frame_len)  # (..., L, N)
    total = 0.0
    iters = 0
    for hyp, sign in ((1, 1.0), (0, -1.0)):
        prob = _symbol_problems(cols, est, cfg, hyp)
        state = bem_solve(prob, max_iter=max_iter, tol=tol)
        r = newton_polish(prob, state.r_hat) if polish else state.r_hat
        iters = max(iters, int(np.max(state.iteration)))
        ev = laplace_log_evidence(prob, r, on_saddle="nan")
        total = total + sign * np.sum(ev, axis=-1)
    return total, iters


def laplace_decide(y_frame, est, cfg, gamma, max_iter=50, tol=1e-8, polish=True):
    """Approximate LRT: sum of per-symbol Laplace log evidences compared with ``log gamma``.

    Frames of shape (..., N, L) and estimates with matching batch axes are
    processed together.  Frames where a Laplace step fails fall back to the
    moment-matched detector (possible only when ``sigma2_g > 0`` or
    ``sigma2_f > 0``).
    """
    from . import gaussian_approx

    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma!r}")
    log_lrt, iters = laplace_scores(y_frame, est, cfg, max_iter, tol, polish)
    log_lrt = np.asarray(log_lrt, dtype=float)
    bad = ~np.isfinite(log_lrt)
    if np.any(bad):
        ga = gaussian_approx.build_ga_model(est, cfg)
        log_lrt = np.where(bad, gaussian_approx.ga_log_likelihood_ratio(ga, y_frame), log_lrt)
    decision = as_decision(log_lrt >= math.log(gamma))
    return LaplaceReport(decision, log_lrt, bad, int(np.count_nonzero(bad)), iters)
