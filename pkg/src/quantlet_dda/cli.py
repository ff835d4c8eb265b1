"""Command-line entry point: ``quantlet-dda <subcommand> [--config FILE]``."""
import argparse
import logging
import sys
from pathlib import Path

from .exceptions import ConfigError, ConvergenceError, SchemaError
from .pipeline import STAGES, load_config, run_stage

EXIT_OK, EXIT_CONFIG, EXIT_SCHEMA, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4, 5

log = logging.getLogger("quantlet_dda")


def build_parser():
    parser = argparse.ArgumentParser(prog="quantlet-dda", description=__doc__)
    parser.add_argument("command", choices=STAGES)
    parser.add_argument("-c", "--config", help="JSON config (default: bundled synthetic config)")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config scalar, e.g. eval.seed=3")
    parser.add_argument("-o", "--out-dir", help="shortcut for --set paths.out_dir=...")
    parser.add_argument("-j", "--n-jobs", type=int, help="shortcut for --set eval.n_jobs=...")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = list(args.overrides)
    if args.out_dir:
        overrides.append(f"paths.out_dir={Path(args.out_dir).resolve()}")
    if args.n_jobs is not None:
        overrides.append(f"eval.n_jobs={args.n_jobs}")
    try:
        cfg = load_config(args.config, overrides)
        pipe = run_stage(cfg, args.command)
        log.info("wrote %d files to %s", len(pipe.writer.written), pipe.out)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
