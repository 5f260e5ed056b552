"""Command-line entry point."""
import argparse
import logging
import sys

from structalign.cli.commands import (
    ABLATION_CHOICES,
    COMMAND_HANDLERS,
    DEFAULT_JOBS,
    EXIT_RUNTIME,
    EXIT_USAGE,
)
from structalign.config import configure_logging
from structalign.exceptions import ConfigError, OutputExistsError, StructAlignError
from structalign.verify import FAULTS

logger = logging.getLogger("structalign")

DEFAULT_SWEEP_GRID = [0.0, 0.1, 1.0, 10.0]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="structalign", description="Continual text-to-video retrieval experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="Run continual experiments")
    run.add_argument("config", help="Flat KEY=value config file")
    run.add_argument("--seed", type=int, action="append", help="Seed (repeatable); defaults to the config seed")
    run.add_argument("--out", required=True, help="Output directory")
    run.add_argument("--ablation", choices=ABLATION_CHOICES, help="Ablation arm overriding the config")
    run.add_argument("--jobs", type=int, default=DEFAULT_JOBS, help="Seeds run concurrently")
    run.add_argument("--overwrite", action="store_true", help="Replace an existing output directory")
    run.add_argument("--dump-sim", action="store_true", help="Also write the final similarity matrix")

    verify = sub.add_parser("verify", help="Run the built-in oracle checks")
    verify.add_argument("--filter", help="Only checks whose group[.name] starts with this")
    verify.add_argument("--inject-fault", choices=FAULTS, help="Test hook corrupting one input")

    report = sub.add_parser("report", help="Aggregate run directories")
    report.add_argument("run_dirs", nargs="+", help="Run directories or multi-seed output directories")
    report.add_argument("--out", help="Directory for aggregate.csv and trajectory.csv (default: stdout)")

    geometry = sub.add_parser("geometry-report", help="Print geometry diagnostics of a run")
    geometry.add_argument("run_dir")

    sweep = sub.add_parser("sweep", help="Grid over lambda1 x lambda2")
    sweep.add_argument("config")
    sweep.add_argument("--out", required=True, help="CSV file for the grid")
    sweep.add_argument("--seed", type=int, help="Seed; defaults to the config seed")
    sweep.add_argument("--ablation", choices=ABLATION_CHOICES)
    sweep.add_argument("--lambda1", type=float, nargs="+", default=DEFAULT_SWEEP_GRID)
    sweep.add_argument("--lambda2", type=float, nargs="+", default=DEFAULT_SWEEP_GRID)
    sweep.add_argument("--overwrite", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    configure_logging()
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as e:
        print(f"structalign: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    handler = COMMAND_HANDLERS[args.command]
    try:
        return handler(args)
    except (ConfigError, OutputExistsError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    except StructAlignError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.error(f"Unexpected failure in {args.command}: {e}")
        return EXIT_RUNTIME
