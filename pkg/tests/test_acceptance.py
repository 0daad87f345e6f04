"""Acceptance criteria, one test each, at the tolerances the package promises.

Every test records a PASS/FAIL line through the ``acceptance`` fixture, so the
terminal summary of a full run lists all eleven outcomes side by side.
"""

import math
import time

import numpy as np
import pytest
from scipy import special, stats

from relaysense import ChannelEstimates, SystemConfig
from relaysense import gaussian_approx as ga
from relaysense import harness as hs
from relaysense import laguerre as lg
from relaysense import laplace_bem as lb
from relaysense import partial_csi as pc
from relaysense import perfect_csi
from relaysense.signal_model import bayes_gamma, draw_rayleigh_estimates, make_rng, sample_frames

from oracles import (
    gaussian_log_marginal,
    grid_map_m1,
    laplace_relative_errors,
    random_problems,
    ridge_map,
    study_grid_problems,
)

pytestmark = pytest.mark.slow

BASE = SystemConfig(2, 2, frame_len=1).with_snr_db(0)
STUDY_SIGMA2 = 0.5


def test_perfect_csi_agreement(acceptance):
    t0 = time.time()
    emp = hs.run_roc(hs.Scenario("csi_empirical", BASE, trials=100000, seed=1))
    theory = hs.run_roc(hs.Scenario("csi_theory", BASE, trials=100000, seed=1))
    np.testing.assert_array_equal(emp.array("log_gamma"), theory.array("log_gamma"))
    dev = max(np.max(np.abs(emp.array(c) - theory.array(c))) for c in ("p_f", "p_d"))
    ok = len(emp.rows) == 41 and dev < 0.01
    acceptance(1, "perfect-CSI empirical vs closed form", ok,
               f"max |dev| {dev:.4f} over {len(emp.rows)} gammas (< 0.01), {time.time() - t0:.1f} s")
    assert ok


def test_antenna_monotonicity(acceptance):
    rng = make_rng(2)
    n_list = (1, 2, 4, 8)
    violations = 0
    draws = 100
    for _ in range(draws):
        cfg = BASE.replace(n_antennas=8)
        est = draw_rayleigh_estimates(cfg, rng)
        pd = []
        for n in n_list:
            model = perfect_csi.build_model(est.g_bar[:, :n], est.f_bar, cfg.replace(n_antennas=n))
            pd.append(perfect_csi.pd_at_pf(model.s_total, 0.1))
        violations += int(not np.all(np.diff(pd) > 0))
    ok = violations == 0
    acceptance(2, "p_d at p_f = 0.1 strictly increasing in N", ok,
               f"{violations} of {draws} nested channel draws violate N = 1 < 2 < 4 < 8")
    assert ok


def test_laguerre_closed_forms(acceptance):
    single = lg.build_series(pc.QuadraticFormSpec([1.0], [0.0], [2]), 100)
    t = np.linspace(0.05, 40, 100)
    err_exp = np.max(np.abs(lg.eval_cdf(single, t) - (1 - np.exp(-t / 2))))
    equal = pc.QuadraticFormSpec(np.ones(4), np.zeros(4), np.full(4, 2))
    series = lg.build_series(equal, 100)
    t = np.linspace(0.05, equal.mean() + 10 * math.sqrt(equal.variance()), 100)
    err_chi2 = np.max(np.abs(lg.eval_cdf(series, t) - stats.chi2.cdf(t, 8)))
    ok = err_exp < 1e-6 and err_chi2 < 1e-6
    acceptance(3, "Laguerre closed-form limits", ok,
               f"exponential {err_exp:.1e}, chi2(8) {err_chi2:.1e} (< 1e-6)")
    assert ok


def test_laguerre_vs_monte_carlo(acceptance):
    cfg = BASE.replace(sigma2_f=1.0)
    g = draw_rayleigh_estimates(BASE, make_rng(4)).g_bar[0]
    est = ChannelEstimates.constant(g, np.zeros(2), 1)
    gammas = sorted({bayes_gamma(cfg), 0.5, 0.8, 1.25, 2.0, 4.0})
    theory = hs.run_roc(hs.Scenario("pcsi_laguerre", cfg, trials=100000, threshold_sweep=gammas, estimates=est))
    emp = hs.run_roc(hs.Scenario("pcsi_empirical", cfg, trials=100000, threshold_sweep=gammas, estimates=est,
                                 seed=4))
    dev = max(np.max(np.abs(theory.array(c) - emp.array(c))) for c in ("p_f", "p_d"))
    ok = len(gammas) == 6 and dev <= 0.01
    acceptance(4, "Laguerre series vs Monte Carlo", ok,
               f"max |dev| {dev:.4f} at {len(gammas)} gammas incl. Bayes (<= 0.01)")
    assert ok


def _moment_z_scores(cfg, est, hyp, n_total, chunk, rng):
    model = ga.build_ga_model(est, cfg)
    mean = model.mu[0] if hyp else np.zeros_like(model.mu[0])
    cov = (model.sigma_h1 if hyp else model.sigma_h0)[0]
    batch = ChannelEstimates(np.broadcast_to(est.g_bar, (chunk,) + est.g_bar.shape),
                             np.broadcast_to(est.f_bar, (chunk,) + est.f_bar.shape))
    n = cfg.n_antennas
    s1 = np.zeros(2 * n)
    s1sq = np.zeros(2 * n)
    s2 = np.zeros((2, n, n))
    s2sq = np.zeros((2, n, n))
    for _ in range(n_total // chunk):
        d = sample_frames(cfg, batch, hyp, rng).y[..., 0] - mean
        x = np.concatenate([d.real, d.imag], axis=1)
        s1 += x.sum(0)
        s1sq += (x**2).sum(0)
        prod = d[:, :, None] * d[:, None, :].conj()
        for k, part in enumerate((prod.real, prod.imag)):
            s2[k] += part.sum(0)
            s2sq[k] += (part**2).sum(0)
    m1 = s1 / n_total
    z_mean = m1 / np.sqrt((s1sq / n_total - m1**2) / n_total)
    m2 = s2 / n_total
    se2 = np.sqrt(np.maximum(s2sq / n_total - m2**2, 0) / n_total)
    target = np.stack([cov.real, cov.imag])
    mask = se2 > 0  # the imaginary diagonal is identically zero
    z_cov = (m2 - target)[mask] / se2[mask]
    return np.concatenate([z_mean, z_cov])


def test_ga_moment_fidelity(acceptance):
    worst = 0.0
    for i, (n, m) in enumerate(((2, 2), (2, 8), (4, 4))):
        cfg = SystemConfig(n, m, sigma2_g=STUDY_SIGMA2, sigma2_f=STUDY_SIGMA2).with_snr_db(0)
        est = draw_rayleigh_estimates(cfg, make_rng(5, i))
        for hyp in (0, 1):
            z = _moment_z_scores(cfg, est, hyp, 1000000, 100000, make_rng(5, i, hyp))
            worst = max(worst, float(np.max(np.abs(z))))
    ok = worst < 4
    acceptance(5, "GA moments vs 1e6 exact draws", ok, f"max |z| {worst:.2f} over all entries (< 4)")
    assert ok


def test_berry_esseen(acceptance):
    halving = max(abs(ga.berry_esseen_bound(n, 4 * m) / ga.berry_esseen_bound(n, m) - 0.5)
                  for n in (1, 2, 4, 8) for m in (1, 2, 10, 1000))
    # sum over M relays of CN(0, I_N) * CN(0, 1) products, scaled by 1/sqrt(M):
    # conditionally on the relay outputs it is CN(0, ||r||^2 / M I_N) and ||r||^2 ~ Gamma(M, 1)
    rng = make_rng(6)
    checks = []
    for n in (1, 2):
        for m in (10**6, 10**7, 10**8):
            bound = ga.berry_esseen_bound(n, m)
            if bound >= 1:
                continue
            scale = np.sqrt(rng.gamma(m, 1.0, 200000) / m)
            z = scale[:, None] * rng.standard_normal((200000, 2 * n))
            ks = max(stats.kstest(z[:, k], "norm").statistic for k in range(2 * n))
            checks.append((n, m, ks, bound))
    within = all(ks <= bound for _, _, ks, bound in checks)
    ok = halving < 1e-14 and within and len(checks) > 0
    worst = max(checks, key=lambda c: c[2] / c[3])
    acceptance(6, "Berry-Esseen bound", ok,
               f"halving error {halving:.1e}; {len(checks)} informative cases, worst KS/bound "
               f"{worst[2]:.4f}/{worst[3]:.4f} at N={worst[0]}, M={worst[1]:.0e}")
    assert ok


def test_qq_convergence(acceptance):
    cfg = SystemConfig(2, 2, sigma2_g=STUDY_SIGMA2, sigma2_f=STUDY_SIGMA2).with_snr_db(0)
    wins = 0
    ratio8 = []
    for seed in range(20):
        tab, _ = hs.run_qq_sweep(cfg, [2, 8], samples=10000, seed=seed)
        ks = tab.array("ks_mean")
        wins += int(ks[0] > ks[1])
        ratio8.append(ks[1] / tab.array("ks_critical")[1])
    ok = wins > 10
    acceptance(7, "Q-Q convergence M = 2 -> 8", ok,
               f"KS falls in {wins}/20 seeds; M=8 KS / 5% critical value median {np.median(ratio8):.2f}, "
               f"max {max(ratio8):.2f}")
    assert ok


def test_bem_correctness(acceptance):
    rng = make_rng(8)
    worst_drop = 0.0
    for n, m in ((1, 1), (2, 2), (4, 3), (2, 4)):
        p = random_problems(rng, n, m, 250)
        hist = np.array(lb.bem_solve(p, keep_history=True).history)
        drop = -np.diff(hist, axis=0) / (1 + np.abs(hist[:-1]))
        worst_drop = max(worst_drop, float(drop.max()))
    p = random_problems(rng, 4, 3, 200, sigma2_g=0.0)
    ridge_err = float(np.max(np.abs(lb.bem_solve(p).r_hat - ridge_map(p))))
    p = random_problems(rng, 2, 1, 10)
    st = lb.bem_solve(p)
    grid_err = max(abs(st.r_hat[i, 0] - grid_map_m1(lb.LatentPosteriorProblem(
        p.y[i], p.g_bar[i], p.r_bar[i], p.sigma2_r[i], p.sigma2_g, p.sigma2_w))) for i in range(10))
    ok = worst_drop <= 1e-10 and ridge_err < 1e-8 and grid_err < 1e-3
    acceptance(8, "BEM correctness", ok,
               f"(a) worst relative drop {max(worst_drop, 0):.1e} on 1000 instances; "
               f"(b) ridge error {ridge_err:.1e}; (c) grid MAP error {grid_err:.1e}")
    assert ok


def test_laplace_evidence(acceptance):
    p = random_problems(make_rng(9), 3, 2, 100, sigma2_g=0.0)
    exact_err = float(np.max(np.abs(lb.laplace_log_evidence(p, lb.bem_solve(p).r_hat) - gaussian_log_marginal(p))))
    cfg = SystemConfig(2, 1, sigma2_g=STUDY_SIGMA2, sigma2_f=STUDY_SIGMA2).with_snr_db(0)
    rel = laplace_relative_errors(study_grid_problems(cfg, seed=0, hypotheses=(1,)))
    weak = laplace_relative_errors(study_grid_problems(cfg.replace(sigma2_g=0.1, sigma2_f=0.1), seed=0,
                                                       hypotheses=(1,)))
    ok = exact_err < 1e-8 and np.max(rel) < 0.05
    acceptance(9, "Laplace evidence", ok,
               f"(a) Gaussian-limit error {exact_err:.1e}; (b) max relative log-evidence error "
               f"{np.max(rel):.3f} on {rel.size} y points at sigma2_g = sigma2_f = {STUDY_SIGMA2} (< 0.05); "
               f"{np.max(weak):.3f} at 0.1")
    assert ok


def _roc_at_targets(m, targets, seed):
    base = SystemConfig(2, m, frame_len=1).with_snr_db(0)
    pp = base.replace(sigma2_g=STUDY_SIGMA2, sigma2_f=STUDY_SIGMA2)
    plan = {
        "csi_empirical": base,
        "pcsi_empirical": base.replace(sigma2_f=STUDY_SIGMA2),
        "ppcsi_gaussian": pp,
        "ppcsi_laplace": pp,
    }
    if m != 2:
        plan = {k: plan[k] for k in ("ppcsi_gaussian", "ppcsi_laplace")}
    return {det: hs.run_roc(hs.Scenario(det, cfg, trials=100000, seed=seed, target_pf=targets))
            for det, cfg in plan.items()}


def test_roc_ordering(acceptance):
    t0 = time.time()
    targets = tuple(np.round(np.linspace(0.05, 0.95, 19), 2))
    res = _roc_at_targets(2, targets, seed=10)
    pd = {k: v.array("p_d") for k, v in res.items()}
    se = {k: v.array("se_pd") for k, v in res.items()}

    def margin(a, b):
        """Smallest (p_d[a] - p_d[b]) in units of the standard error of the difference."""
        return float(np.min((pd[a] - pd[b]) / np.sqrt(se[a] ** 2 + se[b] ** 2)))

    best_pp = "ppcsi_laplace" if np.mean(pd["ppcsi_laplace"]) >= np.mean(pd["ppcsi_gaussian"]) else "ppcsi_gaussian"
    z_csi = margin("csi_empirical", "pcsi_empirical")
    z_pcsi = min(margin("pcsi_empirical", "ppcsi_laplace"), margin("pcsi_empirical", "ppcsi_gaussian"))
    z_lap = margin("ppcsi_laplace", "ppcsi_gaussian")
    res8 = _roc_at_targets(8, targets, seed=11)
    d8 = res8["ppcsi_laplace"].array("p_d") - res8["ppcsi_gaussian"].array("p_d")
    s8 = np.sqrt(res8["ppcsi_laplace"].array("se_pd") ** 2 + res8["ppcsi_gaussian"].array("se_pd") ** 2)
    z8 = float(np.max(np.abs(d8) / s8))
    ok = z_csi >= -2 and z_pcsi >= -2 and z_lap >= -2 and z8 <= 2
    acceptance(10, "ROC ordering csi >= pcsi >= ppcsi, Laplace vs GA", ok,
               f"min z: csi-pcsi {z_csi:.1f}, pcsi-ppcsi {z_pcsi:.1f}, laplace-ga {z_lap:.1f} (>= -2; "
               f"better ppcsi: {best_pp}); M=8 max |laplace-ga| z {z8:.2f} (<= 2); {time.time() - t0:.0f} s")
    assert ok


def test_determinism(acceptance, tmp_path):
    cfgs = {
        "csi_theory": BASE, "csi_empirical": BASE,
        "pcsi_laguerre": BASE.replace(sigma2_f=STUDY_SIGMA2), "pcsi_empirical": BASE.replace(sigma2_f=STUDY_SIGMA2),
        "ppcsi_gaussian": BASE.replace(sigma2_g=STUDY_SIGMA2, sigma2_f=STUDY_SIGMA2),
        "ppcsi_laplace": BASE.replace(sigma2_g=STUDY_SIGMA2, sigma2_f=STUDY_SIGMA2),
    }
    mismatched = []
    for det, cfg in cfgs.items():
        trials = 600 if det == "ppcsi_laplace" else 5000
        blobs = []
        for k, workers in enumerate((1, 1, 2)):
            scen = hs.Scenario(det, cfg, trials=trials, seed=12, workers=workers, analytic_channels=50)
            path = tmp_path / f"{det}_{k}.csv"
            hs.write_results(hs.run_roc(scen), path)
            blobs.append(path.read_bytes())
        if len(set(blobs)) != 1:
            mismatched.append(det)
    for name, run in (
        ("pd-vs-l", lambda: hs.run_pd_vs_frame_length(SystemConfig(1, 2).with_snr_db(0), [1, 2], [1, 2],
                                                      trials=2000, seed=12)),
        ("qq", lambda: hs.run_qq_sweep(cfgs["ppcsi_gaussian"], [2, 4], samples=2000, seed=12)[0]),
    ):
        blobs = []
        for k in range(2):
            path = tmp_path / f"{name}_{k}.csv"
            hs.write_results(run(), path)
            blobs.append(path.read_bytes())
        if blobs[0] != blobs[1]:
            mismatched.append(name)
    ok = not mismatched
    acceptance(11, "byte-identical reruns, serial and parallel", ok,
               "all 6 detectors plus pd-vs-l and qq identical" if ok else f"differs: {', '.join(mismatched)}")
    assert ok
