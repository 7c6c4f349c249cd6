"""
cluster: grid + predictions -> instance PLY and JSON manifest.
"""

import argparse
import logging
from pathlib import Path

import numpy as np

from cli.common import add_config_arg, check_same_cells, config_from
from core.clustering import cluster_scene
from core.errors import ParseError
from core.oracle import read_predictions
from core.ply_io import read_grid, write_grid
from core.pipeline import instance_grid, write_manifest
from core.supervoxel import SuperVoxelPartition, oversegment

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    p = subparsers.add_parser("cluster", help="Merge supervoxels into instances.")
    add_config_arg(p)
    p.add_argument("--grid", type=Path, required=True)
    p.add_argument("--predictions", type=Path, required=True, help="Binary prediction file.")
    p.add_argument("--supervoxels", type=Path, default=None, help="Reuse a partition written by `segment`.")
    p.add_argument("--out", type=Path, required=True, help="Output directory.")
    p.set_defaults(handler=run)


def _partition(path: Path, grid) -> SuperVoxelPartition:
    seg_grid, segments = read_grid(path)
    check_same_cells(grid, seg_grid, str(path))
    if segments is None:
        raise ParseError(str(path), "no 'segment' property")
    # relabel to 0..n-1 in order of first cell
    _, first, inverse = np.unique(segments, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    assignment = rank[inverse].astype(np.int64)
    return SuperVoxelPartition(assignment=assignment, sizes=np.bincount(assignment))


def run(args: argparse.Namespace) -> int:
    config = config_from(args)
    grid, _ = read_grid(args.grid)
    preds = read_predictions(args.predictions, expected_voxels=len(grid))
    if args.supervoxels is not None:
        partition = _partition(args.supervoxels, grid)
    else:
        partition = oversegment(grid, config.supervoxel)

    result = cluster_scene(grid, preds, partition, config.cluster)
    pred = result.prediction

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_grid(out / "instances.ply", instance_grid(grid, pred))
    write_manifest(out / "manifest.json", pred)
    print(f"{len(pred.instances)} instances from {partition.n_segments} supervoxels "
          f"({len(result.graph.merge_log)} merges)")
    return 0
