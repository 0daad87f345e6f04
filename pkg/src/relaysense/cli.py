"""Command-line entry point: ``relaysense {roc, pd-vs-l, qq}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness, laguerre
from .errors import RelaySenseError
from .signal_model import SystemConfig, load_config


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _str_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _base_config(args):
    cfg = load_config(args.config) if args.config else SystemConfig(n_antennas=2, n_relays=2)
    changes = {}
    if args.n_antennas is not None:
        changes["n_antennas"] = args.n_antennas
    if args.n_relays is not None:
        changes["n_relays"] = args.n_relays
    if args.frame_len is not None:
        changes["frame_len"] = args.frame_len
    if changes:
        cfg = cfg.replace(**changes)
    if args.snr_db is not None:
        cfg = cfg.with_snr_db(args.snr_db)
    return cfg


def _matched(cfg, detector):
    """Drop the error variances a detector assumes to be zero."""
    if detector.startswith("csi_"):
        return cfg.replace(sigma2_g=0.0, sigma2_f=0.0)
    if detector.startswith("pcsi_"):
        return cfg.replace(sigma2_g=0.0)
    return cfg


def _cmd_roc(args):
    cfg = _base_config(args)
    detectors = harness.DETECTORS if args.detector == ["all"] else args.detector
    rows = []
    for det in detectors:
        case = _matched(cfg, det) if args.match_csi else cfg
        scen = harness.Scenario(
            det, case, trials=args.trials, seed=args.seed, laguerre_order=args.laguerre_order,
            target_pf=args.target_pf, threshold_sweep=args.gammas,
            analytic_channels=args.analytic_channels, workers=args.workers,
        )
        rows.extend(harness.run_roc(scen).rows)
    harness.write_results(harness.RocResult(harness.ROC_COLUMNS, rows), args.out)


def _cmd_pd_vs_l(args):
    cfg = _base_config(args)
    table = harness.run_pd_vs_frame_length(
        cfg, args.n_list, args.l_list, target_pf=args.target_pf, trials=args.trials, seed=args.seed,
        detectors=args.detector, laguerre_order=args.laguerre_order, workers=args.workers,
    )
    harness.write_results(table, args.out)


def _cmd_qq(args):
    cfg = _base_config(args)
    summary, reports = harness.run_qq_sweep(cfg, args.m_list, samples=args.samples, seed=args.seed)
    harness.write_results(summary, args.out)
    out = Path(args.out)
    for m, rep in reports.items():
        out.with_name(f"{out.stem}_M{m}_quantiles{out.suffix or '.csv'}").write_text(rep.to_text())


def build_parser():
    parser = argparse.ArgumentParser(prog="relaysense", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, default_detector):
        p.add_argument("--config", help="JSON or YAML file with SystemConfig fields")
        p.add_argument("--detector", type=_str_list, default=default_detector,
                       help="comma-separated detector names" + (" or 'all'" if p.prog.endswith("roc") else ""))
        p.add_argument("--trials", type=int, default=100000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--snr-db", type=float, default=0.0,
                       help="receive SNR; recalibrates sigma2_v and sigma2_w (default 0)")
        p.add_argument("--laguerre-order", type=int, default=laguerre.DEFAULT_ORDER)
        p.add_argument("--out", required=True, help="output table (comma-separated)")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("-N", "--n-antennas", type=int)
        p.add_argument("-M", "--n-relays", type=int)
        p.add_argument("-L", "--frame-len", type=int)

    roc = sub.add_parser("roc", help="ROC curve for one or more detectors")
    common(roc, ["csi_empirical"])
    sweep = roc.add_mutually_exclusive_group()
    sweep.add_argument("--target-pf", type=_float_list, help="comma-separated false-alarm targets")
    sweep.add_argument("--gammas", type=_float_list, help="comma-separated likelihood-ratio thresholds")
    roc.add_argument("--analytic-channels", type=int)
    roc.add_argument("--match-csi", action="store_true",
                     help="zero the error variances each detector assumes known")
    roc.set_defaults(func=_cmd_roc)

    pdl = sub.add_parser("pd-vs-l", help="detection probability versus frame length at fixed p_f")
    common(pdl, ["csi_empirical", "pcsi_empirical"])
    pdl.add_argument("--n-list", type=_int_list, default=[1, 2, 4])
    pdl.add_argument("--l-list", type=_int_list, default=[1, 2, 4, 8])
    pdl.add_argument("--target-pf", type=float, default=0.1)
    pdl.set_defaults(func=_cmd_pd_vs_l)

    qq = sub.add_parser("qq", help="normality diagnostics of the received components")
    common(qq, None)
    qq.add_argument("--m-list", type=_int_list, default=[2, 4, 8])
    qq.add_argument("--samples", type=int, default=10000)
    qq.set_defaults(func=_cmd_qq)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (RelaySenseError, ValueError, OSError, KeyError) as exc:
        print(f"relaysense: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
