"""Monte Carlo driver: ROC curves, detection versus frame length, normality sweeps.

Every detector is reduced to a scalar log likelihood-ratio score per frame and
a frame is declared H1 when the score reaches ``log gamma``.  Empirical
detectors sample frames; the two analytic ones (``csi_theory`` and
``pcsi_laguerre``) average closed-form probabilities over the channel
realisations the empirical runs would see.

Randomness is organised in blocks of :data:`BLOCK_SIZE` trials.  Block ``b``
of hypothesis ``h`` uses the generator ``make_rng(seed, h, b)``; it first draws
the channel estimates for its trials and then the frames.  Results depend only
on the seed, never on how blocks are scheduled across worker processes.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from . import gaussian_approx, laguerre, laplace_bem, partial_csi, perfect_csi
from .errors import DegenerateModelError, ScenarioError
from .signal_model import (
    ChannelEstimates,
    Hypothesis,
    bayes_gamma,
    draw_rayleigh_estimates,
    make_rng,
    receive_snr_db,
    sample_frames,
)

__all__ = [
    "DETECTORS",
    "EMPIRICAL_PARTNER",
    "BLOCK_SIZE",
    "Scenario",
    "RocResult",
    "Table",
    "check_detector",
    "detector_scores",
    "simulate_scores",
    "default_gamma_sweep",
    "run_roc",
    "run_pd_vs_frame_length",
    "run_qq_sweep",
    "write_results",
    "read_results",
]

DETECTORS = (
    "csi_theory",
    "csi_empirical",
    "pcsi_laguerre",
    "pcsi_empirical",
    "ppcsi_gaussian",
    "ppcsi_laplace",
)
ANALYTIC = ("csi_theory", "pcsi_laguerre")
EMPIRICAL_PARTNER = {"csi_theory": "csi_empirical", "pcsi_laguerre": "pcsi_empirical"}
BLOCK_SIZE = 2048
SWEEP_POINTS = 41
SWEEP_TAIL = 1e-3
LAGUERRE_CHANNEL_CAP = 1000
ROC_COLUMNS = ("p_f", "p_d", "detector", "N", "M", "L", "snr_db", "trials", "seed", "se_pf", "se_pd", "log_gamma")


@dataclass(frozen=True)
class Scenario:
    """One Monte Carlo experiment.

    Parameters
    ----------
    detector : str
        One of :data:`DETECTORS`.
    cfg : SystemConfig
    trials : int
        Total number of frames, split evenly between H0 and H1.
    threshold_sweep : sequence of float, optional
        Likelihood-ratio thresholds ``gamma``.  Defaults to a 41-point
        log-spaced grid centred on the Bayes threshold.
    target_pf : sequence of float, optional
        Sweep false-alarm targets instead; empirical detectors then threshold
        at the H0 order statistic and analytic ones solve for ``gamma``.
    seed : int
    estimates : ChannelEstimates, optional
        A fixed, unbatched channel instance.  By default every trial draws
        its own estimates from the Rayleigh prior.
    laguerre_order : int
    analytic_channels : int, optional
        How many channel draws per hypothesis the analytic detectors average
        over.  Default: all trials for ``csi_theory``, 1000 for
        ``pcsi_laguerre``.
    workers : int
        Worker processes for the sampled detectors (1 runs in-process).
    """

    detector: str
    cfg: object
    trials: int = 100000
    threshold_sweep: tuple = None
    target_pf: tuple = None
    seed: int = 0
    estimates: ChannelEstimates = None
    laguerre_order: int = laguerre.DEFAULT_ORDER
    analytic_channels: int = None
    workers: int = 1

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise ScenarioError(f"unknown detector {self.detector!r}; choose from {', '.join(DETECTORS)}")
        if int(self.trials) < 2:
            raise ScenarioError("need at least two trials (one per hypothesis)")
        object.__setattr__(self, "trials", int(self.trials))
        if self.threshold_sweep is not None and self.target_pf is not None:
            raise ScenarioError("give either threshold_sweep or target_pf, not both")
        for name in ("threshold_sweep", "target_pf"):
            sweep = getattr(self, name)
            if sweep is None:
                continue
            sweep = tuple(float(v) for v in np.ravel(sweep))
            if len(sweep) == 0:
                raise ScenarioError(f"{name} is empty")
            if list(sweep) != sorted(sweep):
                raise ScenarioError(f"{name} must be sorted")
            if name == "threshold_sweep" and min(sweep) <= 0:
                raise ScenarioError("thresholds gamma must be positive")
            if name == "target_pf" and not all(0 < v < 1 for v in sweep):
                raise ScenarioError("target_pf values must lie in (0, 1)")
            object.__setattr__(self, name, sweep)
        if self.estimates is not None:
            if self.estimates.batch_shape != ():
                raise ScenarioError("a fixed channel instance must be unbatched")
            self.estimates.check(self.cfg)
        check_detector(self.detector, self.cfg)

    @property
    def split(self):
        """Trials under (H0, H1)."""
        n0 = self.trials // 2
        return n0, self.trials - n0


@dataclass(frozen=True)
class Table:
    """Column names plus rows of plain Python values."""

    columns: tuple
    rows: list = field(default_factory=list)

    def column(self, name):
        i = self.columns.index(name)
        return [row[i] for row in self.rows]

    def where(self, **match):
        idx = [self.columns.index(k) for k in match]
        rows = [r for r in self.rows if all(r[i] == v for i, v in zip(idx, match.values()))]
        return Table(self.columns, rows)

    def array(self, name):
        return np.asarray(self.column(name), dtype=float)


class RocResult(Table):
    """ROC rows ordered by nondecreasing ``p_f``."""


def check_detector(detector, cfg):
    """Raise :class:`ScenarioError` if ``detector`` does not fit the CSI regime of ``cfg``."""
    g, f = cfg.sigma2_g, cfg.sigma2_f
    if detector.startswith("csi_") and not (g == 0 and f == 0):
        raise ScenarioError(f"{detector} assumes perfect CSI (sigma2_g = sigma2_f = 0)")
    if detector.startswith("pcsi_") and not (g == 0 and f > 0):
        raise ScenarioError(f"{detector} assumes exact G and uncertain F (sigma2_g = 0 < sigma2_f)")
    if detector.startswith("ppcsi_") and not (g > 0 or f > 0):
        raise ScenarioError(f"{detector} needs sigma2_g > 0 or sigma2_f > 0")


def detector_scores(detector, y, est, cfg):
    """Log likelihood-ratio scores of a sampled detector for frames (B, N, L)."""
    if detector == "csi_empirical":
        model = perfect_csi.build_model(est.g_bar, est.f_bar, cfg)
        return perfect_csi.log_likelihood_ratio(model, y)
    if detector == "pcsi_empirical":
        model = partial_csi.build_dual_model(est.g_bar, est.f_bar, cfg)
        return partial_csi.log_likelihood_ratio(model, y)
    if detector == "ppcsi_gaussian":
        return gaussian_approx.ga_log_likelihood_ratio(gaussian_approx.build_ga_model(est, cfg), y)
    if detector == "ppcsi_laplace":
        return laplace_bem.laplace_decide(y, est, cfg, 1.0).log_lrt
    raise ScenarioError(f"{detector} is not a sampled detector")


def _blocks(n):
    return [(b, min(BLOCK_SIZE, n - b * BLOCK_SIZE)) for b in range(-(-n // BLOCK_SIZE))]


def _block_estimates(cfg, fixed, rng, n):
    if fixed is None:
        return draw_rayleigh_estimates(cfg, rng, n)
    return ChannelEstimates(
        np.broadcast_to(fixed.g_bar, (n,) + fixed.g_bar.shape),
        np.broadcast_to(fixed.f_bar, (n,) + fixed.f_bar.shape),
    )


def _score_block(args):
    detector, cfg, fixed, seed, hyp, block, n = args
    rng = make_rng(seed, hyp, block)
    est = _block_estimates(cfg, fixed, rng, n)
    obs = sample_frames(cfg, est, hyp, rng)
    return np.asarray(detector_scores(detector, obs.y, est, cfg), dtype=float)


def simulate_scores(detector, cfg, trials_per_hypothesis, seed, estimates=None, workers=1):
    """Scores under H0 and H1, ``trials_per_hypothesis = (n0, n1)``."""
    jobs = [
        (detector, cfg, estimates, seed, hyp, b, n)
        for hyp, total in ((0, trials_per_hypothesis[0]), (1, trials_per_hypothesis[1]))
        for b, n in _blocks(total)
    ]
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=int(workers)) as pool:
            parts = list(pool.map(_score_block, jobs))
    else:
        parts = [_score_block(job) for job in jobs]
    h0 = [p for job, p in zip(jobs, parts) if job[4] == 0]
    h1 = [p for job, p in zip(jobs, parts) if job[4] == 1]
    return np.concatenate(h0), np.concatenate(h1)


def default_gamma_sweep(h0_scores, gamma_bayes, points=SWEEP_POINTS, tail=SWEEP_TAIL):
    """Log-spaced ``gamma`` grid with ``gamma_bayes`` as its middle point.

    The ends sit at the H0 score quantiles ``tail`` and ``1 - tail`` (pushed
    outwards if the Bayes point lies beyond them), so the sweep covers ``p_f``
    from about ``tail`` to ``1 - tail``.  Each half is evenly spaced in
    ``log gamma``.
    """
    centre = math.log(gamma_bayes)
    finite = h0_scores[np.isfinite(h0_scores)]
    lo, hi = np.quantile(finite, [tail, 1.0 - tail])
    lo = min(lo, centre - 1e-6)
    hi = max(hi, centre + 1e-6)
    half = points // 2
    left = np.linspace(lo, centre, half + 1)
    right = np.linspace(centre, hi, points - half)[1:]
    return np.exp(np.concatenate([left, right]))


def _pilot_sweep(scenario):
    partner = EMPIRICAL_PARTNER.get(scenario.detector, scenario.detector)
    n = min(BLOCK_SIZE, scenario.split[0])
    h0 = _score_block((partner, scenario.cfg, scenario.estimates, scenario.seed, 0, 0, n))
    return default_gamma_sweep(h0, bayes_gamma(scenario.cfg))


# ----------------------------------------------------------------------------- analytic detectors


def _analytic_estimates(scenario, count):
    """Channel draws shared by both analytic curves: the H1 stream of the sampled partner."""
    if scenario.estimates is not None:
        return ChannelEstimates(scenario.estimates.g_bar[None], scenario.estimates.f_bar[None])
    parts = []
    got = 0
    for b, n in _blocks(scenario.split[1]):
        take = min(n, count - got)
        rng = make_rng(scenario.seed, 1, b)
        est = draw_rayleigh_estimates(scenario.cfg, rng, n)
        parts.append(ChannelEstimates(est.g_bar[:take], est.f_bar[:take]))
        got += take
        if got >= count:
            break
    return ChannelEstimates(
        np.concatenate([p.g_bar for p in parts]), np.concatenate([p.f_bar for p in parts])
    )


class _AnalyticCurve:
    """Channel-averaged ``P(score >= log gamma)`` under one hypothesis."""

    def __init__(self, scenario, hyp):
        default_cap = scenario.trials if scenario.detector == "csi_theory" else LAGUERRE_CHANNEL_CAP
        cap = scenario.analytic_channels or default_cap
        est = _analytic_estimates(scenario, min(cap, scenario.split[1]))
        self.n_channels = est.batch_shape[0]
        self.detector = scenario.detector
        cfg = scenario.cfg
        if self.detector == "csi_theory":
            model = perfect_csi.build_model(est.g_bar, est.f_bar, cfg)
            self.s = np.asarray(model.s_total, dtype=float)
            if np.any(self.s <= 0):
                raise DegenerateModelError("a channel draw carries no signal")
            self.sign = 1.0 if hyp == 1 else -1.0
        else:
            model = partial_csi.build_dual_model(est.g_bar, est.f_bar, cfg)
            self.offset = np.asarray(model.offset, dtype=float)
            self.series = []
            self.shift = np.empty(self.n_channels)
            for i in range(self.n_channels):
                spec = partial_csi.whiten_to_quadratic_form(model.instance(i), hyp)
                self.series.append(laguerre.build_series(spec, scenario.laguerre_order))
                self.shift[i] = spec.shift

    def per_channel(self, log_gamma):
        lg = np.atleast_1d(np.asarray(log_gamma, dtype=float))
        if self.detector == "csi_theory":
            s = self.s[:, None]
            # score ~ N(sign s/2, s/2)
            z = (lg[None, :] - self.sign * s / 2.0) / np.sqrt(s / 2.0)
            return ndtr(-z)
        out = np.empty((self.n_channels, lg.size))
        for i, ser in enumerate(self.series):
            out[i] = 1.0 - laguerre.eval_cdf(ser, lg + self.offset[i] - self.shift[i])
        return out

    def mean_se(self, log_gamma):
        vals = self.per_channel(log_gamma)
        mean = vals.mean(axis=0)
        se = vals.std(axis=0, ddof=1) / math.sqrt(self.n_channels) if self.n_channels > 1 else np.zeros_like(mean)
        return mean, se

    def solve(self, target):
        """``log gamma`` at which the channel-averaged probability equals ``target``."""
        f = lambda lg: float(self.mean_se(lg)[0][0]) - target
        lo, hi = -1.0, 1.0
        while f(lo) < 0:
            lo *= 2.0
            if lo < -1e6:
                return math.nan
        while f(hi) > 0:
            hi *= 2.0
            if hi > 1e6:
                return math.nan
        return brentq(f, lo, hi, xtol=1e-12, rtol=1e-12)


# ----------------------------------------------------------------------------- ROC


def _binomial_se(p, n):
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def _roc_row(scenario, p_f, p_d, se_pf, se_pd, log_gamma):
    cfg = scenario.cfg
    return (
        float(p_f), float(p_d), scenario.detector, cfg.n_antennas, cfg.n_relays, cfg.frame_len,
        round(receive_snr_db(cfg), 9), scenario.trials, scenario.seed, float(se_pf), float(se_pd),
        float(log_gamma),
    )


def _sorted_result(rows):
    rows = sorted(rows, key=lambda r: (r[0], r[1], -r[-1]))
    return RocResult(ROC_COLUMNS, rows)


def run_roc(scenario):
    """ROC points for one scenario, ordered by ``p_f``.

    Empirical rows carry binomial standard errors ``sqrt(p (1 - p) / n)``
    with ``n`` the trials under the relevant hypothesis.  Analytic rows carry
    the standard error of the channel average.
    """
    n0, n1 = scenario.split
    rows = []
    if scenario.detector in ANALYTIC:
        curve1 = _AnalyticCurve(scenario, 1)
        curve0 = _AnalyticCurve(scenario, 0)
        if scenario.target_pf is not None:
            lgs = np.array([curve0.solve(t) for t in scenario.target_pf])
        else:
            gammas = scenario.threshold_sweep if scenario.threshold_sweep is not None else _pilot_sweep(scenario)
            lgs = np.log(np.asarray(gammas, dtype=float))
        ok = np.isfinite(lgs)
        pd, sd = curve1.mean_se(lgs[ok])
        pf, sf = curve0.mean_se(lgs[ok])
        for lg, a, b, c, d in zip(lgs[ok], pf, pd, sf, sd):
            rows.append(_roc_row(scenario, a, b, c, d, lg))
        return _sorted_result(rows)

    h0, h1 = simulate_scores(scenario.detector, scenario.cfg, (n0, n1), scenario.seed, scenario.estimates, scenario.workers)
    if scenario.target_pf is not None:
        for target in scenario.target_pf:
            thr = float(np.quantile(h0, 1.0 - target, method="higher"))
            pf = float(np.mean(h0 >= thr))
            pd = float(np.mean(h1 >= thr))
            rows.append(_roc_row(scenario, pf, pd, _binomial_se(pf, n0), _binomial_se(pd, n1), thr))
    else:
        gammas = scenario.threshold_sweep if scenario.threshold_sweep is not None else _pilot_sweep(scenario)
        for lg in np.log(np.asarray(gammas, dtype=float)):
            pf = float(np.mean(h0 >= lg))
            pd = float(np.mean(h1 >= lg))
            rows.append(_roc_row(scenario, pf, pd, _binomial_se(pf, n0), _binomial_se(pd, n1), lg))
    return _sorted_result(rows)


# ----------------------------------------------------------------------------- detection vs frame length

PD_COLUMNS = ("detector", "N", "M", "L", "snr_db", "target_pf", "p_f", "p_d", "se_pd", "trials", "seed", "calibrated")


def run_pd_vs_frame_length(
    cfg,
    n_list,
    l_list,
    target_pf=0.1,
    trials=100000,
    seed=0,
    detectors=("csi_empirical", "pcsi_empirical"),
    laguerre_order=laguerre.DEFAULT_ORDER,
    workers=1,
):
    """Detection probability at a fixed false-alarm rate over (N, L).

    The transmitter channel is unknown a priori (``F_bar = 0``,
    ``sigma2_f = 1``).  Perfect-CSI detectors are given the realised channel,
    partial-CSI ones only its prior.  Rows whose calibration fails are kept
    with ``calibrated = 0`` and NaN probabilities.
    """
    if not 0 < target_pf < 1:
        raise ScenarioError("target_pf must lie in (0, 1)")
    rows = []
    for n in n_list:
        for l in l_list:
            base = cfg.replace(n_antennas=int(n), frame_len=int(l), sigma2_g=0.0)
            for det in detectors:
                case = base.replace(sigma2_f=0.0 if det.startswith("csi_") else 1.0)
                scen = Scenario(det, case, trials=trials, target_pf=(target_pf,), seed=seed,
                                laguerre_order=laguerre_order, workers=workers)
                try:
                    res = run_roc(scen)
                    ok = len(res.rows) == 1
                except (DegenerateModelError, ValueError):
                    ok = False
                if ok:
                    row = dict(zip(res.columns, res.rows[0]))
                    pf, pd, se = row["p_f"], row["p_d"], row["se_pd"]
                else:
                    pf = pd = se = math.nan
                rows.append((det, int(n), case.n_relays, int(l), round(receive_snr_db(case), 9), float(target_pf),
                             pf, pd, se, int(trials), int(seed), int(ok)))
    return Table(PD_COLUMNS, rows)


# ----------------------------------------------------------------------------- Q-Q sweep

QQ_SUMMARY_COLUMNS = ("M", "N", "L", "samples", "seed", "ks_mean", "ks_max", "ks_critical")


def run_qq_sweep(cfg, m_list, samples=10000, seed=0, hypothesis=Hypothesis.H1, n_quantiles=99):
    """Normality diagnostics of the standardized received components per relay count.

    For each ``M`` one channel estimate is drawn from the Rayleigh prior and
    ``samples`` frames are standardized with the moment-matched mean and
    variance.  Returns ``(summary_table, {M: NormalityReport})``.
    """
    if len(m_list) == 0:
        raise ScenarioError("m_list is empty")
    if cfg.sigma2_g == 0 and cfg.sigma2_f == 0:
        raise ScenarioError("with perfect CSI the received vector is exactly Gaussian; nothing to diagnose")
    reports = {}
    rows = []
    for i, m in enumerate(m_list):
        case = cfg.replace(n_relays=int(m))
        rng = make_rng(seed, 3, i)
        est = draw_rayleigh_estimates(case, rng)
        z = gaussian_approx.standardized_components(case, est, hypothesis, int(samples), rng)
        rep = gaussian_approx.normality_diagnostics(z, n_quantiles)
        reports[int(m)] = rep
        rows.append((int(m), case.n_antennas, case.frame_len, int(samples), int(seed), rep.ks_mean, rep.ks_max,
                     rep.critical_value()))
    return Table(QQ_SUMMARY_COLUMNS, rows), reports


# ----------------------------------------------------------------------------- persistence


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.6g" % float(value)
    return str(value)


def write_results(result, path):
    """Write a table as comma-separated text with a header row (overwrites)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(result.columns)
        for row in result.rows:
            writer.writerow([_fmt(v) for v in row])


def read_results(path):
    """Read a file produced by :func:`write_results`; numeric cells become floats."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        rows = []
        for raw in reader:
            row = []
            for cell in raw:
                try:
                    row.append(float(cell))
                except ValueError:
                    row.append(cell)
            rows.append(tuple(row))
    return Table(header, rows)
