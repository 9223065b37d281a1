"""Command-line entry point ``ofdm-amp``.

Exit status: 0 on success, 1 on a configuration error, 2 when any trial hit a
numerical abort (results are still written).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import harness
from .model import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, help="master seed (overrides the spec)")
    p.add_argument("--trials", type=int, help="trials per grid point (overrides the spec)")
    p.add_argument("--threads", type=int, help=f"worker processes (default: ${harness.WORKERS_ENV} or 1)")
    p.add_argument("--format", choices=harness.FORMATS, help="output format (overrides the spec)")
    p.add_argument("--out", help="output path (overrides the spec)")
    p.add_argument("--no-tracking", action="store_true",
                   help="report the raw final iterate of amp_a_ec / amp_a_ac")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ofdm-amp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("simulate", "Monte Carlo at the base point of a spec"),
        ("se", "state-evolution curves only"),
        ("sweep", "Monte Carlo over the spec's sweep grid"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("spec", help="JSON experiment spec")
        _common(p)
    sub.add_parser("check", help="run the built-in oracle checks")
    return parser


def _apply_overrides(spec: harness.ExperimentSpec, args, command: str) -> harness.ExperimentSpec:
    base_changes = {}
    if args.seed is not None:
        base_changes["master_seed"] = args.seed
    if args.no_tracking:
        base_changes["tracking_enabled"] = False
    base = dataclasses.replace(spec.base, **base_changes) if base_changes else spec.base
    changes = {"base": base}
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials must be positive")
        changes["trials"] = args.trials
    if args.format is not None:
        changes["format"] = args.format
    if args.out is not None:
        changes["output"] = args.out
    if command == "simulate":
        changes["sweep"] = ()
    if command == "se":
        changes["algorithms"] = ("se_analysis",)
    return dataclasses.replace(spec, **changes)


def _run_check() -> int:
    from .checks import run_all

    results = run_all()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "check":
        return _run_check()
    try:
        spec = _apply_overrides(harness.load_spec(args.spec), args, args.command)
        result = harness.run_experiment(spec, workers=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rec_path, sum_path = harness.write_results(result, spec.output, spec.format)
    print(f"wrote {rec_path} and {sum_path}")
    if result.numerical_aborts:
        print(f"{result.numerical_aborts} trial(s) aborted on invalid numerical values", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
