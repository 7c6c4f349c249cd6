"""
bench: stage timings on a large synthetic scene, or the clustering ablation.
"""

import argparse
from pathlib import Path

from cli.common import add_config_arg, config_from, print_table
from core import timing
from core.pipeline import bench, run_ablation, write_json
from core.schemas import AblationReport, TimingReport


def register(subparsers) -> None:
    p = subparsers.add_parser("bench", help="Time supervoxel segmentation and clustering.")
    add_config_arg(p)
    p.add_argument("--voxels", type=int, default=100_000, help="Approximate scene size in cells.")
    p.add_argument("--ablation", action="store_true", help="Compare clustering variants instead.")
    p.add_argument("--scenes", type=int, default=10, help="Scenes per ablation variant.")
    p.add_argument("--out", type=Path, default=None, help="Write the result as JSON here.")
    p.set_defaults(handler=run)


def _ablation(args: argparse.Namespace) -> int:
    config = config_from(args)
    rows = run_ablation(config, range(config.seed, config.seed + args.scenes))
    print_table(
        f"{'variant':<14}{'mAP':>8}{'mAP@0.5':>10}{'mAP@0.25':>10}",
        [f"{r.variant:<14}{r.mean_ap:>8.3f}{r.map50:>10.3f}{r.map25:>10.3f}" for r in rows],
    )
    if args.out is not None:
        write_json(args.out, AblationReport(variants=rows).model_dump_json(indent=2))
    return 0


def run(args: argparse.Namespace) -> int:
    if args.ablation:
        return _ablation(args)
    config = config_from(args)
    result = bench(config, args.voxels)
    rows = [f"{name:<14}{result.stages.get(name, 0.0):>10.3f}"
            for name in (timing.NETWORK, timing.SUPERVOXEL, timing.CLUSTERING)]
    rows.append(f"{'seg+cluster':<14}{result.segmentation_and_clustering:>10.3f}")
    print(f"{result.n_voxels} cells, {result.n_supervoxels} supervoxels, {result.n_merges} merges")
    print_table(f"{'stage':<14}{'seconds':>10}", rows)
    if result.report is not None:
        print(f"mAP {result.report.mean_ap:.3f}  mAP@0.5 {result.report.map50:.3f}")
    if args.out is not None:
        report = TimingReport(stages=result.stages, total=sum(result.stages.values()), n_voxels=result.n_voxels,
                              n_supervoxels=result.n_supervoxels, n_merges=result.n_merges)
        write_json(args.out, report.model_dump_json(indent=2))
    return 0
