"""
synth: plant a synthetic scene and emit oracle predictions for it.
"""

import argparse
import logging
from pathlib import Path

from cli.common import add_config_arg, config_from
from core.oracle import emit_predictions, write_predictions
from core.pipeline import synthesize
from core.ply_io import write_cloud, write_grid

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    p = subparsers.add_parser("synth", help="Generate a labeled scene with oracle predictions.")
    add_config_arg(p)
    p.add_argument("--out", type=Path, required=True, help="Output directory.")
    p.add_argument("--ascii", action="store_true", help="Write text PLY files.")
    p.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = config_from(args)
    scene = synthesize(config)
    preds = emit_predictions(scene.grid, scene.ground_truth, config.oracle, config.n_classes,
                             config.embedding_dim, scene.confusable_pairs)

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_cloud(out / "cloud.ply", scene.cloud, text=args.ascii)
    write_grid(out / "grid.ply", scene.grid, text=args.ascii)
    write_predictions(out / "predictions.bin", preds)
    print(f"{scene.n_instances} instances, {len(scene.cloud)} points, {len(scene.grid)} cells -> {out}")
    return 0
