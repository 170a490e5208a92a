"""Command line entry point: ``aehpinn {train,sweep,evaluate,compare}``."""

import argparse
import logging
import sys
from pathlib import Path

from .exceptions import CheckpointError, ConfigurationError, NumericFailureError
from . import harness

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


def _out_dir(args, config):
    return Path(args.out) if args.out else Path(config.run.output_dir)


def cmd_train(args):
    config = harness.load_config(args.config)
    seeds = [args.seed] if args.seed is not None else None
    summary = harness.run_experiment(config, _out_dir(args, config), seeds)
    sys.stdout.write(summary.to_text())
    if not summary.complete:
        failures = [r for r in summary.results if not r.ok]
        if all(r.error.startswith("numeric failure") for r in failures):
            return EXIT_NUMERIC
    return EXIT_OK


def _print_matrix(rows, seeds):
    sys.stdout.write(harness.matrix_csv(rows, seeds))


def cmd_sweep(args):
    config = harness.load_config(args.config)
    harness.parse_grid(args.grid)  # fail fast before any training
    rows = harness.sweep(config, args.grid, _out_dir(args, config))
    _print_matrix(rows, config.run.seeds)
    return EXIT_OK


def cmd_evaluate(args):
    for key, value in harness.evaluate_checkpoint(args.checkpoint).items():
        if isinstance(value, float):
            value = f"{value:.17e}"
        print(f"{key} = {value}")
    return EXIT_OK


def cmd_compare(args):
    configs = [harness.load_config(p) for p in args.configs]
    labels = [Path(p).stem for p in args.configs]
    if len(set(labels)) != len(labels):
        labels = [f"{i}_{lab}" for i, lab in enumerate(labels)]
    rows = harness.compare(configs, Path(args.out), labels)
    seeds = []
    for c in configs:
        seeds += [s for s in c.run.seeds if s not in seeds]
    _print_matrix(rows, seeds)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="aehpinn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train every seed of a config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="train this seed only")
    p.add_argument("--out", help="output directory (default: run.output_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="cross-product of config overrides")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True,
                   help='e.g. "strategy.kind=aeh,hard_only;strategy.s1+strategy.s2=1:1,5:1"')
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("evaluate", help="relative L2 error of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="run several configs into one matrix")
    p.add_argument("--out", required=True)
    p.add_argument("configs", nargs="+")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
