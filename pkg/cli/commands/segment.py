"""
segment: grid PLY -> the same grid with a per-cell `segment` property.
"""

import argparse
from pathlib import Path

import numpy as np

from cli.common import add_config_arg, config_from
from core.ply_io import read_grid, write_grid
from core.supervoxel import oversegment


def register(subparsers) -> None:
    p = subparsers.add_parser("segment", help="Over-segment a grid into supervoxels.")
    add_config_arg(p)
    p.add_argument("--grid", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="Supervoxel PLY to write.")
    p.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = config_from(args)
    grid, _ = read_grid(args.grid)
    partition = oversegment(grid, config.supervoxel)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_grid(args.out, grid, segments=partition.assignment)
    sizes = partition.sizes
    print(f"{partition.n_segments} supervoxels, size median {int(np.median(sizes))} "
          f"(min {int(sizes.min())}, max {int(sizes.max())})")
    return 0
