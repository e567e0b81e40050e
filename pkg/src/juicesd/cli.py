"""Command line entry point.

    juicesd sweep-snr --trials 200 --out runs/fig7
    juicesd phase-transition --config pt.yaml --threads 4 --out runs/pt

Exit status is 0 on success, 1 for configuration errors and 2 when the
run itself fails.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .harness import (ConfigError, ExperimentFailed, check_writable, default_spec, load_spec,
                      run_experiment, with_overrides, write_results)

COMMANDS = {
    "sweep-snr": "snr_sweep",
    "phase-transition": "phase_transition",
    "se-compare": "se_compare",
    "nrs-sweep": "nrs_sweep",
    "large-scale": "large_scale_fading",
}

log = logging.getLogger("juicesd")


def build_parser():
    p = argparse.ArgumentParser(prog="juicesd", description="Grant-free NOMA receiver experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, kind in COMMANDS.items():
        s = sub.add_parser(name, help=f"run a {kind} experiment")
        s.add_argument("--config", help="YAML experiment file (defaults to built-in desk-scale setup)")
        s.add_argument("--seed", type=int, help="master seed (u64)")
        s.add_argument("--trials", type=int, help="frames per grid point")
        s.add_argument("--out", default=os.path.join("runs", kind), help="output directory")
        s.add_argument("--algorithms", help="comma-separated list, e.g. rigm,ga,two_phase")
        s.add_argument("--threads", type=int, default=1, help="worker processes")
        if kind == "se_compare":
            s.add_argument("--se-tables", action="store_true", help="also build and save transfer tables")
        s.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    kind = COMMANDS[args.command]
    try:
        spec = load_spec(args.config, kind) if args.config else default_spec(kind)
        algs = None
        if args.algorithms:
            algs = [a.strip() for a in args.algorithms.split(",") if a.strip()]
        if args.seed is not None and not (0 <= args.seed < 2 ** 64):
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        spec = with_overrides(spec, args.seed, args.trials, algs)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except ConfigError as e:
        log.error("config error: %s", e)
        return 1
    try:
        check_writable(args.out)
    except OSError as e:
        log.error("cannot write to %s: %s", args.out, e)
        return 2
    tables = None
    if getattr(args, "se_tables", False):
        tables = os.path.join(args.out, "se_tables")
    try:
        table = run_experiment(spec, threads=args.threads, log=log.info, table_dir=tables)
    except ExperimentFailed as e:
        if e.table:
            write_results(e.table, args.out, spec)
        log.error("run failed: %s", e)
        return 2
    except Exception as e:  # anything else is a runtime failure, not a config error
        log.error("run failed: %s: %s", type(e).__name__, e)
        return 2
    path = write_results(table, args.out, spec)
    log.info("wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
