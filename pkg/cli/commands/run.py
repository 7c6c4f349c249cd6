"""
run: the whole pipeline on one scene, or on many seeded scenes in parallel.
"""

import argparse
import logging
from pathlib import Path

from cli.common import add_config_arg, config_from
from core.config import settings
from core.pipeline import run_many, run_pipeline

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    p = subparsers.add_parser("run", help="Synthesize (or read), segment, cluster and evaluate.")
    add_config_arg(p)
    p.add_argument("--out", type=Path, default=Path(settings.OUTPUT_DIR), help="Output directory.")
    p.add_argument("--input", type=Path, default=None, help="Labeled point cloud PLY instead of a synthetic scene.")
    p.add_argument("--predictions", type=Path, default=None, help="Prediction file instead of the oracle.")
    p.add_argument("--cdf-out", type=Path, default=None)
    p.add_argument("--scenes", type=int, default=1, help="Number of seeded synthetic scenes.")
    p.add_argument("--jobs", type=int, default=settings.DEFAULT_JOBS, help="Worker processes for --scenes.")
    p.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = config_from(args)
    if args.scenes > 1:
        if args.input is not None or args.predictions is not None:
            logger.error("--scenes only applies to synthetic scenes")
            return 1
        aggregate = run_many(config, args.out, range(config.seed, config.seed + args.scenes), jobs=args.jobs)
        for key, value in aggregate.means.items():
            print(f"{key:<16}{value:.4f}")
        return 0

    result = run_pipeline(config, args.out, cloud_path=args.input,
                          predictions_path=args.predictions, cdf_out=args.cdf_out)
    if result.report is not None:
        print(f"mAP {result.report.mean_ap:.4f} | mAP@0.5 {result.report.map50:.4f} | "
              f"mAP@0.25 {result.report.map25:.4f}")
    print(f"{len(result.clusters.prediction.instances)} instances -> {args.out}")
    return 0
