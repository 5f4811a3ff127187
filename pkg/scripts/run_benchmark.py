"""Run the Monte-Carlo model comparison and print a ranking with paired statistics.

Example:
    python3 scripts/run_benchmark.py --config configs/default.json --out results/default
"""

import argparse
import logging

import numpy as np
from scipy import stats

from preintvio.bench import run_monte_carlo, write_report


def paired_report(report, a, b):
    """Paired one-sided t-test that model ``a`` has lower per-run position RMSE than ``b``."""
    ra = np.array([r.pos_rmse for r in report.results[a]])
    rb = np.array([r.pos_rmse for r in report.results[b]])
    ok = np.isfinite(ra) & np.isfinite(rb)
    d = rb[ok] - ra[ok]
    res = stats.ttest_1samp(d, 0.0, alternative="greater")
    return float(d.mean()), float(res.pvalue)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default="configs/default.json")
    p.add_argument("--runs", type=int)
    p.add_argument("--rate", type=float, help="override the IMU rate in Hz")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    from preintvio.config import ScenarioConfig

    cfg = ScenarioConfig.load(args.config)
    if args.rate is not None:
        d = cfg.to_dict()
        d["imu"]["rate"] = args.rate
        cfg = ScenarioConfig.from_dict(d)
    report = run_monte_carlo(cfg, runs=args.runs, workers=args.workers)
    write_report(report, args.out)
    for model, entry in report.summary().items():
        print(f"{model:>9s}  pos RMSE {entry['pos_rmse_m']:.4f} m  (std {entry['pos_rmse_std_m']:.4f})")
    models = list(report.results)
    for a, b in (("m1", "discrete"), ("m2", "m1"), ("m2", "discrete")):
        if a in models and b in models:
            gap, pval = paired_report(report, a, b)
            print(f"{b} - {a}: mean paired gap {gap:+.5f} m, one-sided p = {pval:.3g}")


if __name__ == "__main__":
    main()
