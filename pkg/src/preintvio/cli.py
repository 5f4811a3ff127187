"""``bench`` command-line entry point.

Subcommands:

* ``bench run --config <path> [--mode ...] [--models m1,m2,discrete] [--runs N]
  [--seed S] [--workers W] --out <dir>``: Monte-Carlo comparison, writes one
  CSV per model plus ``summary.json`` and ``config.json``.
* ``bench oracle [--configs N] [--tol-scale s]``: runs the numerical oracle
  suite.

Exit codes: 0 success, 1 configuration error, 2 oracle failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ORACLE = 2

log = logging.getLogger("preintvio.cli")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from exc
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="bench", description="IMU preintegration model benchmark")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-v info, -vv debug)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="Monte-Carlo comparison of the preintegration models")
    r.add_argument("--config", required=True, help="scenario JSON file")
    r.add_argument("--mode", choices=("tightly-coupled", "loosely-coupled"), help="visual factor type")
    r.add_argument("--models", help="comma-separated subset of m1,m2,discrete")
    r.add_argument("--runs", type=_positive_int, help="number of Monte-Carlo runs")
    r.add_argument("--seed", type=int, help="master seed")
    r.add_argument("--workers", type=_positive_int, default=1, help="parallel processes (results do not depend on it)")
    r.add_argument("--no-cov", action="store_true", help="skip per-step covariances (NEES reported as null)")
    r.add_argument("--out", required=True, help="output directory")

    o = sub.add_parser("oracle", help="run the numerical oracle suite")
    o.add_argument("--configs", type=_positive_int, default=100, help="random configurations per Jacobian block")
    o.add_argument("--rk4-draws", type=_positive_int, default=1000, help="random draws for the RK4 mean check")
    o.add_argument("--tol-scale", type=float, default=1.0, help="multiply every tolerance by this factor")
    return p


def _cmd_run(args):
    from .bench import run_monte_carlo, write_report

    models = None if args.models is None else [m.strip().lower() for m in args.models.split(",") if m.strip()]
    report = run_monte_carlo(
        args.config, models=models, runs=args.runs, seed=args.seed, mode=args.mode,
        want_cov=not args.no_cov, workers=args.workers,
    )
    paths = write_report(report, args.out)
    for model, entry in report.summary().items():
        print(
            f"{model:>9s}: pos RMSE {entry['pos_rmse_m']} m, ori RMSE {entry['ori_rmse_deg']} deg, "
            f"NEES {entry['nees_mean']}, diverged {entry['diverged_runs']}/{report.config.runs}"
        )
    for k, v in report.timings.items():
        log.info("wall-clock %s: %.1f s", k, v)
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def _cmd_oracle(args):
    from .oracle import run_oracle_suite

    if not args.tol_scale > 0:
        raise ConfigError("--tol-scale must be positive")
    checks = run_oracle_suite(tol_scale=args.tol_scale, configs=args.configs, rk4_draws=args.rk4_draws)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} oracle checks passed")
    return EXIT_ORACLE if failed else EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; report them as configuration errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_oracle(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
