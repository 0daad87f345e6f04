"""Stochastic model of the amplify-and-forward relay network.

Under the idle hypothesis H0 the relays only forward their own noise,

    y(l) = G(l) v(l) + w(l),

and under the active hypothesis H1 they forward the pilot as well,

    y(l) = G(l) (f(l) s(l) + v(l)) + w(l),   l = 1..L.

Complex Gaussian convention used throughout the package: ``CN(m, s2)`` has
independent real and imaginary parts, each ``N(Re/Im m, s2 / 2)``.

Array layout: per-symbol quantities carry the symbol axis before the matrix
axes, e.g. ``g_bar`` has shape ``(..., L, N, M)``.  Received frames follow the
N x L convention, ``y`` has shape ``(..., N, L)``.  Any leading axes are batch
axes and are carried through untouched.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError

__all__ = [
    "Hypothesis",
    "SystemConfig",
    "ChannelEstimates",
    "FrameObservation",
    "make_rng",
    "complex_normal",
    "calibrate_noise",
    "receive_snr_db",
    "bayes_gamma",
    "draw_rayleigh_estimates",
    "sample_frames",
    "sample_frame",
    "load_config",
]

_SEED_MASK = (1 << 64) - 1


class Hypothesis(enum.IntEnum):
    H0 = 0
    H1 = 1

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions, noise and CSI-error variances, priors and Bayes costs.

    ``costs[x][y]`` is the cost of deciding H_x when H_y is true.
    ``pilot`` defaults to all ones.  ``redraw_estimates`` makes the Rayleigh
    estimate generator draw new channel estimates for every symbol instead of
    one block-fading realisation per frame.
    """

    n_antennas: int
    n_relays: int
    frame_len: int = 1
    sigma2_v: float = 0.5
    sigma2_w: float = 1.0
    sigma2_g: float = 0.0
    sigma2_f: float = 0.0
    pilot: tuple = None
    prior_h1: float = 0.5
    costs: tuple = ((0.0, 1.0), (1.0, 0.0))
    redraw_estimates: bool = False

    def __post_init__(self):
        for name in ("n_antennas", "n_relays", "frame_len"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        for name in ("sigma2_v", "sigma2_w"):
            value = float(getattr(self, name))
            if not value > 0 or not math.isfinite(value):
                raise ConfigurationError(f"{name} must be finite and > 0, got {value!r}")
            object.__setattr__(self, name, value)
        for name in ("sigma2_g", "sigma2_f"):
            value = float(getattr(self, name))
            if not value >= 0 or not math.isfinite(value):
                raise ConfigurationError(f"{name} must be finite and >= 0, got {value!r}")
            object.__setattr__(self, name, value)
        if not 0.0 < self.prior_h1 < 1.0:
            raise ConfigurationError(f"prior_h1 must lie in (0, 1), got {self.prior_h1!r}")

        if self.pilot is None:
            pilot = (1.0 + 0.0j,) * self.frame_len
        else:
            pilot = tuple(complex(s) for s in np.ravel(np.asarray(self.pilot, dtype=complex)))
        if len(pilot) != self.frame_len:
            raise ConfigurationError(
                f"pilot has {len(pilot)} symbols but frame_len is {self.frame_len}"
            )
        object.__setattr__(self, "pilot", pilot)

        costs = np.asarray(self.costs, dtype=float)
        if costs.shape != (2, 2):
            raise ConfigurationError(f"costs must be a 2x2 matrix, got shape {costs.shape}")
        object.__setattr__(self, "costs", tuple(tuple(float(c) for c in row) for row in costs))

    @property
    def pilot_array(self):
        return np.asarray(self.pilot, dtype=complex)

    def replace(self, **changes):
        if "frame_len" in changes and "pilot" not in changes:
            changes["pilot"] = None
        return replace(self, **changes)

    def with_snr_db(self, snr_db, relay_share=0.5):
        """Copy with noise variances recalibrated to the given receive SNR."""
        sigma2_v, sigma2_w = calibrate_noise(snr_db, self.n_relays, relay_share)
        return self.replace(sigma2_v=sigma2_v, sigma2_w=sigma2_w)

    def to_dict(self):
        pilot = [[s.real, s.imag] for s in self.pilot]
        return {
            "n_antennas": self.n_antennas,
            "n_relays": self.n_relays,
            "frame_len": self.frame_len,
            "sigma2_v": self.sigma2_v,
            "sigma2_w": self.sigma2_w,
            "sigma2_g": self.sigma2_g,
            "sigma2_f": self.sigma2_f,
            "pilot": pilot,
            "prior_h1": self.prior_h1,
            "costs": [list(row) for row in self.costs],
            "redraw_estimates": self.redraw_estimates,
        }

    @classmethod
    def from_mapping(cls, data):
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
        if data.get("pilot") is not None:
            data["pilot"] = [_parse_complex(s) for s in data["pilot"]]
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None


def _parse_complex(value):
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ConfigurationError(f"complex pilot entries are [re, im] pairs, got {value!r}")
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, str):
        return complex(value.replace(" ", ""))
    return complex(value)


def load_config(path):
    """Read a :class:`SystemConfig` from a JSON or YAML file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a mapping at top level")
    return SystemConfig.from_mapping(data)


@dataclass(frozen=True)
class ChannelEstimates:
    """Noisy channel estimates ``g_bar`` (..., L, N, M) and ``f_bar`` (..., L, M)."""

    g_bar: np.ndarray
    f_bar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "g_bar", np.asarray(self.g_bar, dtype=complex))
        object.__setattr__(self, "f_bar", np.asarray(self.f_bar, dtype=complex))

    @classmethod
    def constant(cls, g_bar, f_bar, frame_len):
        """Block-fading estimates: the same (N, M) and (M,) pair for every symbol."""
        g_bar = np.asarray(g_bar, dtype=complex)
        f_bar = np.asarray(f_bar, dtype=complex)
        g = np.broadcast_to(g_bar[..., None, :, :], g_bar.shape[:-2] + (frame_len,) + g_bar.shape[-2:])
        f = np.broadcast_to(f_bar[..., None, :], f_bar.shape[:-1] + (frame_len,) + f_bar.shape[-1:])
        return cls(g.copy(), f.copy())

    @property
    def batch_shape(self):
        return self.g_bar.shape[:-3]

    def check(self, cfg):
        n, m, l = cfg.n_antennas, cfg.n_relays, cfg.frame_len
        if self.g_bar.ndim < 3 or self.g_bar.shape[-3:] != (l, n, m):
            raise ConfigurationError(
                f"g_bar must have trailing shape (L, N, M) = {(l, n, m)}, got {self.g_bar.shape}"
            )
        if self.f_bar.ndim < 2 or self.f_bar.shape[-2:] != (l, m):
            raise ConfigurationError(
                f"f_bar must have trailing shape (L, M) = {(l, m)}, got {self.f_bar.shape}"
            )
        if self.g_bar.shape[:-3] != self.f_bar.shape[:-2]:
            raise ConfigurationError("g_bar and f_bar batch shapes differ")
        if not (np.all(np.isfinite(self.g_bar)) and np.all(np.isfinite(self.f_bar))):
            raise DomainError("channel estimates must be finite")


@dataclass(frozen=True)
class FrameObservation:
    """A received frame plus the latent draws that produced it.

    ``drawn_g`` (..., L, N, M), ``drawn_f`` (..., L, M), ``drawn_v`` (..., L, M)
    and ``drawn_w`` (..., L, N) are kept so tests and oracle detectors can
    recompute ``y`` exactly.
    """

    y: np.ndarray
    truth: Hypothesis
    drawn_g: np.ndarray
    drawn_f: np.ndarray
    drawn_v: np.ndarray
    drawn_w: np.ndarray
    pilot: np.ndarray = field(default=None)

    def recompute(self):
        """Rebuild ``y`` from the retained draws."""
        r = self.drawn_v
        if self.truth == Hypothesis.H1:
            r = self.drawn_f * self.pilot + r
        y = np.einsum("...lnm,...lm->...ln", self.drawn_g, r) + self.drawn_w
        return np.swapaxes(y, -1, -2)


def make_rng(seed, *key):
    """Generator keyed by ``seed`` and an integer counter ``key``.

    Streams for different keys are statistically independent, so work split
    by key gives the same numbers whatever order it is executed in.
    """
    seq = np.random.SeedSequence(int(seed) & _SEED_MASK, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))


def complex_normal(rng, shape, var=1.0):
    """Draw ``CN(0, var)`` entries: real and imaginary parts each ``N(0, var/2)``."""
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    z = rng.standard_normal(tuple(shape) + (2,))
    return scale * (z[..., 0] + 1j * z[..., 1])


def calibrate_noise(snr_db, n_relays, relay_share=0.5):
    """Noise variances ``(sigma2_v, sigma2_w)`` matching a receive SNR.

    The total effective noise ``sigma2_v + sigma2_w / M`` equals
    ``10**(-snr_db/10)``; ``relay_share`` is the fraction carried by the relays.
    """
    if not 0.0 < relay_share < 1.0:
        raise DomainError(f"relay_share must lie in (0, 1), got {relay_share!r}")
    if n_relays < 1:
        raise DomainError("n_relays must be positive")
    total = 10.0 ** (-float(snr_db) / 10.0)
    sigma2_v = relay_share * total
    sigma2_w = (1.0 - relay_share) * total * n_relays
    return sigma2_v, sigma2_w


def receive_snr_db(cfg):
    """Receive SNR ``10 log10(1 / (sigma2_v + sigma2_w / M))`` for unit-power channels."""
    if not (cfg.sigma2_v > 0 and cfg.sigma2_w > 0):
        raise DomainError("noise variances must be positive")
    return 10.0 * math.log10(1.0 / (cfg.sigma2_v + cfg.sigma2_w / cfg.n_relays))


def bayes_gamma(cfg):
    """Bayes threshold on the likelihood ratio, from the priors and costs."""
    (c00, c01), (c10, c11) = cfg.costs
    if not (c10 > c00 and c01 > c11):
        raise DomainError("costs must satisfy C10 > C00 and C01 > C11")
    p1 = cfg.prior_h1
    gamma = ((1.0 - p1) / p1) * (c10 - c00) / (c01 - c11)
    if not (math.isfinite(gamma) and gamma > 0):
        raise DomainError(f"Bayes threshold is not finite and positive: {gamma!r}")
    return gamma


def draw_rayleigh_estimates(cfg, rng, size=()):
    """Channel estimates consistent with unit-variance Rayleigh channels.

    The estimate carries variance ``1 - sigma2`` so that estimate plus error
    is ``CN(0, 1)``.  With ``sigma2_f == 1`` the F estimate is identically zero
    (blind sensing).
    """
    for name in ("sigma2_g", "sigma2_f"):
        if getattr(cfg, name) > 1.0:
            raise ConfigurationError(f"{name} must be <= 1 for unit-power Rayleigh channels")
    size = (int(size),) if np.isscalar(size) else tuple(int(s) for s in size)
    n, m, l = cfg.n_antennas, cfg.n_relays, cfg.frame_len
    n_draw = l if cfg.redraw_estimates else 1
    g = complex_normal(rng, size + (n_draw, n, m), 1.0 - cfg.sigma2_g)
    f = complex_normal(rng, size + (n_draw, m), 1.0 - cfg.sigma2_f)
    if not cfg.redraw_estimates:
        g = np.repeat(g, l, axis=-3)
        f = np.repeat(f, l, axis=-2)
    return ChannelEstimates(g, f)


def sample_frames(cfg, est, truth, rng):
    """Draw one frame per batch element of ``est`` under hypothesis ``truth``.

    G(l) ~ CN(g_bar(l), sigma2_g) entrywise, f(l) ~ CN(f_bar(l), sigma2_f I),
    v ~ CN(0, sigma2_v I), w ~ CN(0, sigma2_w I), all independent.
    """
    est.check(cfg)
    truth = Hypothesis.parse(truth)
    batch = est.batch_shape
    n, m, l = cfg.n_antennas, cfg.n_relays, cfg.frame_len
    g = est.g_bar + complex_normal(rng, batch + (l, n, m), cfg.sigma2_g)
    f = est.f_bar + complex_normal(rng, batch + (l, m), cfg.sigma2_f)
    v = complex_normal(rng, batch + (l, m), cfg.sigma2_v)
    w = complex_normal(rng, batch + (l, n), cfg.sigma2_w)
    pilot = cfg.pilot_array[:, None]
    obs = FrameObservation(None, truth, g, f, v, w, pilot)
    return replace(obs, y=obs.recompute())


def sample_frame(cfg, est, truth, seed):
    """Reproducible single-frame draw; identical arguments give identical arrays."""
    if est.batch_shape != ():
        raise ConfigurationError("sample_frame expects unbatched estimates; use sample_frames")
    return sample_frames(cfg, est, truth, make_rng(seed))
