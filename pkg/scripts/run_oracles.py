"""Run the numerical oracle suite and exit non-zero on any failure.

Example:
    python3 scripts/run_oracles.py --configs 100
"""

import argparse
import sys

from preintvio.oracle import run_oracle_suite


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--configs", type=int, default=100)
    p.add_argument("--tol-scale", type=float, default=1.0)
    args = p.parse_args()
    checks = run_oracle_suite(tol_scale=args.tol_scale, configs=args.configs)
    for c in checks:
        print(c.line())
    return 0 if all(c.passed for c in checks) else 2


if __name__ == "__main__":
    sys.exit(main())
