"""
voxelize: point cloud PLY -> voxel grid PLY.
"""

import argparse
from pathlib import Path

from cli.common import add_config_arg, config_from
from core.geometry import voxelize
from core.ply_io import read_cloud, write_grid


def register(subparsers) -> None:
    p = subparsers.add_parser("voxelize", help="Average a point cloud into voxel cells.")
    add_config_arg(p)
    p.add_argument("--input", type=Path, required=True, help="Point cloud PLY.")
    p.add_argument("--out", type=Path, required=True, help="Grid PLY to write.")
    p.add_argument("--resolution", type=float, default=None, help="Voxel edge in meters (overrides config).")
    p.add_argument("--ascii", action="store_true")
    p.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = config_from(args)
    resolution = args.resolution if args.resolution is not None else config.voxel.resolution
    grid = voxelize(read_cloud(args.input), resolution)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_grid(args.out, grid, text=args.ascii)
    print(f"{len(grid)} cells at {resolution} m ({int(grid.point_counts.sum())} points)")
    return 0
