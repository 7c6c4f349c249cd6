"""
voxclust - command-line entry point.
Builds the argument parser from cli.commands and maps errors to exit codes.
"""

import sys
import os

# Ensure the project root is in sys.path regardless of how the file is run.
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import argparse
import logging
from typing import List, Optional

from cli.commands import COMMANDS
from core.errors import PipelineError
from core.logging_config import setup_logging

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxclust",
        description="Occupancy-aware instance segmentation of voxelized 3D scenes.",
    )
    parser.add_argument("--log-level", default=None, help="Overrides LOG_LEVEL from the environment.")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    try:
        return args.handler(args)
    except PipelineError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1
    except Exception as exc:
        logger.error("Unexpected error in %s: %s", args.command, exc, exc_info=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
