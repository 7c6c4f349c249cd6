"""
Argument helpers shared by the subcommands.
"""

import argparse
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from core.config import PipelineConfig, load_config
from core.errors import AlignmentError
from core.geometry import VoxelGrid

logger = logging.getLogger(__name__)


def add_config_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON config file (defaults apply when omitted).")
    parser.add_argument("--seed", type=int, default=None, help="Override the config seed.")


def config_from(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config)
    seed: Optional[int] = getattr(args, "seed", None)
    if seed is not None:
        config = config.with_seed(seed)
    return config


def check_same_cells(a: VoxelGrid, b: VoxelGrid, what: str) -> None:
    if len(a) != len(b) or not np.array_equal(a.coords, b.coords):
        raise AlignmentError(f"{what} does not cover the same cells as the ground-truth grid")


def print_table(header: str, rows: list) -> None:
    print(header)
    print("-" * len(header))
    for row in rows:
        print(row)
