"""Command-line entry point for part-level concept mining."""

import argparse
import logging
import sys
from typing import List, Optional

from app_config import check_dependencies, configure_logging
from commands import COMMANDS
from commands.common import EXIT_RUNTIME, EXIT_USAGE, StageError, UsageError
from utils import ConceptMinerError

logger = logging.getLogger("concept_miner")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="concept_miner",
        description="Mine part-level concepts, train a sparse concept head and evaluate explanations.",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    try:
        configure_logging(args.log_level)
    except ConceptMinerError as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"{parser.prog}: error: {e}\n")
        return EXIT_USAGE

    if not check_dependencies():
        return EXIT_RUNTIME

    try:
        return args.run(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"{parser.prog} {args.command}: error: {e}\n")
        return EXIT_USAGE
    except StageError as e:
        logger.error("%s: stage %s failed: %s", args.command, e.stage, e.cause)
        return EXIT_RUNTIME
    except ConceptMinerError as e:
        logger.error("%s failed: %s", args.command, e)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
