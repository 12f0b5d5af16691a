"""``hibbo`` command line: run, fig2, report, selftest.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import harness
from .benchmarks import FIGURE2_FAMILIES

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("hibbo")


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0,2,5"`` or ``"0-4"`` (inclusive) or a mix such as ``"0-2,7"``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError(f"no seeds in {text!r}")
    return tuple(seeds)


def _seeds_arg(text):
    try:
        return parse_seeds(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hibbo", description="Latent-space Bayesian optimisation with a HiPPO-regularised VAE.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute the (method, seed) runs of an experiment config")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", type=Path, help="output directory (overrides [experiment].out)")
    run.add_argument("--seeds", type=_seeds_arg, help="seed list such as 0-4 or 0,3 (overrides the config)")
    run.add_argument("--jobs", type=int, default=1, help="parallel (method, seed) runs")
    run.add_argument("--force", action="store_true", help="overwrite existing run records")

    fig2 = sub.add_parser("fig2", help="write the HiPPO-consistency demo table as CSV")
    fig2.add_argument("--family", default="sin-sin", choices=FIGURE2_FAMILIES)
    fig2.add_argument("--order", type=int, default=5)
    fig2.add_argument("--seeds", type=_seeds_arg, default=(0,))
    fig2.add_argument("--out", type=Path, required=True, help="CSV file to write")
    fig2.add_argument("--force", action="store_true", help="overwrite an existing file")

    report = sub.add_parser("report", help="summarise a directory of run records")
    report.add_argument("directory", type=Path)
    report.add_argument("--out", type=Path, help="where to write report.csv and summary.txt (default: the run directory)")

    sub.add_parser("selftest", help="run the built-in invariant checks")
    return parser


def _configure_logging() -> None:
    name = os.environ.get("HIBBO_LOG_LEVEL", "info").lower()
    level = LOG_LEVELS.get(name, logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if name not in LOG_LEVELS:
        log.warning("ignoring HIBBO_LOG_LEVEL=%r; expected one of %s", name, sorted(LOG_LEVELS))


def cmd_run(args) -> int:
    try:
        config = harness.load_config(args.config)
        if args.out is not None:
            config = dataclasses.replace(config, out=args.out)
        if args.seeds is not None:
            config = dataclasses.replace(config, seeds=args.seeds)
        if args.jobs < 1:
            raise harness.ConfigInvalid("--jobs must be at least 1")
    except harness.ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    results = harness.run_experiment(config, jobs=args.jobs, force=args.force)
    failed = False
    for method, seed, status, error in results:
        if status == "failed":
            failed = True
            print(f"{method} seed {seed}: FAILED {error}", file=sys.stderr)
        else:
            print(f"{method} seed {seed}: {status} -> {config.record_path(method, seed)}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_fig2(args) -> int:
    if args.out.exists() and not args.force:
        print(f"{args.out} exists; use --force to overwrite", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        config_hash = harness.write_fig2(args.out, args.family, args.seeds, args.order)
    except harness.ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {args.out} (config_hash {config_hash})")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        text = harness.report(args.directory, args.out)
    except (ValueError, OSError) as exc:
        print(f"report failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(text, end="")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_all

    failures = 0
    for name, ok, detail in run_all():
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}{': ' + detail if detail else ''}")
    return EXIT_OK if failures == 0 else EXIT_RUNTIME


COMMANDS = {"run": cmd_run, "fig2": cmd_fig2, "report": cmd_report, "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors are configuration errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    _configure_logging()
    try:
        return COMMANDS[args.command](args)
    except Exception:
        log.exception("unexpected failure")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
