"""
eval: score an instance PLY + manifest against a labeled grid.
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from pydantic import ValidationError

from cli.common import add_config_arg, check_same_cells, config_from
from core.errors import ParseError
from core.evaluation import evaluate, format_report, occupancy_cdf
from core.geometry import extract_ground_truth
from core.losses import relative_errors
from core.oracle import read_predictions
from core.pipeline import write_cdf_csv, write_json
from core.ply_io import read_grid
from core.scene import CLASS_NAMES
from core.schemas import EvalReportModel, InstanceManifest

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    p = subparsers.add_parser("eval", help="Compute mAP and per-class scores.")
    add_config_arg(p)
    p.add_argument("--gt", type=Path, required=True, help="Grid PLY with ground-truth labels.")
    p.add_argument("--instances", type=Path, required=True, help="Instance PLY written by `cluster`.")
    p.add_argument("--manifest", type=Path, required=True, help="Manifest JSON written by `cluster`.")
    p.add_argument("--predictions", type=Path, default=None, help="Prediction file, adds the occupancy error CDF.")
    p.add_argument("--out", type=Path, required=True, help="Output directory for report.json and report.txt.")
    p.add_argument("--cdf-out", type=Path, default=None, help="CSV of the occupancy error CDF.")
    p.set_defaults(handler=run)


def load_manifest(path: Path) -> InstanceManifest:
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(str(path), f"cannot read manifest: {exc}") from exc
    try:
        return InstanceManifest.model_validate_json(raw)
    except ValidationError as exc:
        raise ParseError(str(path), f"invalid manifest: {exc.errors()[0].get('msg')}") from exc


def run(args: argparse.Namespace) -> int:
    config = config_from(args)
    gt_grid, _ = read_grid(args.gt)
    gt = extract_ground_truth(gt_grid)
    inst_grid, _ = read_grid(args.instances)
    check_same_cells(gt_grid, inst_grid, str(args.instances))
    manifest = load_manifest(args.manifest)
    pred = manifest.to_prediction(inst_grid.instance_labels)

    report = evaluate(pred, gt, config.iou_thresholds, n_voxels=len(gt_grid))
    if args.predictions is not None:
        preds = read_predictions(args.predictions, expected_voxels=len(gt_grid))
        report = replace(report, occupancy_cdf=occupancy_cdf(relative_errors(preds, gt)))
    elif args.cdf_out is not None:
        logger.warning("--cdf-out needs --predictions; no CDF written")

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", EvalReportModel.from_report(report).model_dump_json(indent=2))
    text = format_report(report, CLASS_NAMES)
    (out / "report.txt").write_text(text, encoding="utf-8")
    if args.cdf_out is not None:
        write_cdf_csv(args.cdf_out, report)
    print(text, end="")
    return 0
