"""Command-line entry point.

``ppikit <experiment> [--config f.json] [--out dir] [--seed s] [--trials t] [--set key=value ...]``
runs an experiment and writes ``<out>/<experiment>.csv`` plus plot data;
``ppikit validate`` runs the built-in invariant checks and
``ppikit lambda-probe`` prints the lambda diagnostics of one trial.

Exit codes: 0 success, 2 configuration error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import EXPERIMENTS, ConfigError, ExperimentConfig, parse_set
from .results import emit_csv, emit_plotdata

COMMANDS = EXPERIMENTS + ("validate", "lambda-probe")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ppikit", description="Prediction-powered estimation experiments.")
    p.add_argument("command", help="one of: " + ", ".join(COMMANDS))
    p.add_argument("--config", help="JSON file of flat dotted keys")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--trials", type=int, help="trials per sweep value")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("--experiment", default="synth-mean",
                   help="experiment probed by lambda-probe")
    p.add_argument("--quiet", action="store_true")
    return p


def build_config(args, experiment: str) -> ExperimentConfig:
    overrides = parse_set(args.set)
    for key, value in (("out", args.out), ("seed", args.seed), ("trials", args.trials)):
        if value is not None:
            overrides[key] = value
    if args.config:
        return ExperimentConfig.from_file(args.config, experiment, overrides)
    return ExperimentConfig.build(experiment, overrides)


def run(cfg: ExperimentConfig, quiet: bool = False) -> int:
    from .experiments import run_experiment

    table = run_experiment(cfg)
    out = Path(cfg["out"])
    emit_csv(table, out / f"{cfg.experiment}.csv")
    emit_plotdata(table, out / "plotdata")
    for job, err in table.errors:
        print(f"trial {job} failed:\n{err}", file=sys.stderr)
    if not quiet:
        print(table.to_csv_text(), end="")
    return 1 if table.errors else 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _parser().parse_args(argv)
        if args.command not in COMMANDS:
            raise ConfigError(f"unknown command {args.command!r}")
        if args.command == "validate":
            from .validate import run_checks

            return 0 if run_checks(verbose=not args.quiet) else 1
        experiment = args.experiment if args.command == "lambda-probe" else args.command
        cfg = build_config(args, experiment)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        _parser().print_usage(sys.stderr)
        return 2
    try:
        if args.command == "lambda-probe":
            from .validate import lambda_probe

            print(lambda_probe(cfg))
            return 0
        return run(cfg, args.quiet)
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
