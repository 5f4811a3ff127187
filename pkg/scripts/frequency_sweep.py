"""Repeat the model comparison over several IMU rates and tabulate the DISCRETE gap.

Example:
    python3 scripts/frequency_sweep.py --runs 50 --out results/sweep
"""

import argparse
import json
import logging
from pathlib import Path

from preintvio.bench import run_monte_carlo, write_report
from preintvio.config import ScenarioConfig


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default="configs/default.json")
    p.add_argument("--rates", default="100,200,400,800")
    p.add_argument("--runs", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    base = ScenarioConfig.load(args.config).to_dict()
    table = {}
    for rate in (float(r) for r in args.rates.split(",")):
        d = dict(base, imu=dict(base["imu"], rate=rate))
        report = run_monte_carlo(ScenarioConfig.from_dict(d), runs=args.runs, workers=args.workers)
        write_report(report, Path(args.out) / f"{int(rate)}hz")
        s = report.summary()
        row = {m: s[m]["pos_rmse_m"] for m in s}
        if "m1" in row and "discrete" in row:
            row["rel_gap_discrete_m1"] = (row["discrete"] - row["m1"]) / row["m1"]
        table[str(int(rate))] = row
        print(rate, row)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "sweep.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
