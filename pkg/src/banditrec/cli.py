"""Simulate recommendation feedback and compare LOOCV, clipped IPS and A/B tests.

Subcommands: simulate, eval, sweep-m, calibrate-click.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 data-format error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import pipeline
from .config import load_config
from .env import calibrate_click_offset
from .errors import ConfigError, DataFormatError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DATA = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="desk",
                        help="TOML config path or preset name (desk, full); default: desk")
    common.add_argument("--seed", type=int, help="root seed (overrides [run] seed)")
    common.add_argument("--out", help="output directory (overrides [run] out)")
    common.add_argument("--threads", type=int, help="worker threads for user simulation")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="banditrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate train/test organic and bandit logs")
    sub.add_parser("eval", parents=[common], help="LOOCV, clipped IPS and A/B reports")
    sub.add_parser("sweep-m", parents=[common], help="clipped IPS across the configured M grid")
    cal = sub.add_parser("calibrate-click", parents=[common],
                         help="bisect click_offset to the target uniform-action CTR")
    cal.add_argument("--target-ctr", type=float, help="defaults to [env] target_ctr")
    cal.add_argument("--samples", type=int, default=200_000)
    return parser


def _run(args) -> int:
    cfg = load_config(args.config, seed=args.seed).with_overrides(out=args.out, threads=args.threads)
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be at least 1")

    if args.command == "simulate":
        data = pipeline.simulate(cfg)
        for phase, ds in data.items():
            print(f"{phase}: {ds.num_users} users, {len(ds.organic)} organic, "
                  f"{len(ds.bandit)} bandit events -> {cfg.out / phase}")
    elif args.command == "eval":
        s = pipeline.evaluate(cfg)
        width = max(len(r.policy) for r in s.rows)
        print(f"{'policy':<{width}}  {'HR@1':>7}  {'CIPS':>8}  {'CIPS 95% CI':>19}  {'A/B CTR':>8}")
        for r in s.rows:
            print(f"{r.policy:<{width}}  {r.loocv_hr_at_1:7.4f}  {r.cips_estimate:8.5f}  "
                  f"[{r.cips_ci_low:8.5f},{r.cips_ci_high:8.5f}]  {r.ab_ctr:8.5f}")
        print(f"Kendall tau vs A/B: LOOCV {s.tau_loocv_ab:+.3f}, CIPS-UCB {s.tau_cips_ab:+.3f}")
        print(f"reports written to {cfg.out}")
    elif args.command == "sweep-m":
        reports = pipeline.sweep_m(cfg)
        print(f"{len(reports)} rows written to {cfg.out / 'clip_sweep.csv'}")
    elif args.command == "calibrate-click":
        target = args.target_ctr if args.target_ctr is not None else cfg.target_ctr
        offset = calibrate_click_offset(replace(cfg.env), target, num_samples=args.samples)
        print(f"click_offset = {offset!r}  # click_scale={cfg.env.click_scale}, target_ctr={target}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
