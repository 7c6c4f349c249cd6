"""
End-to-end pipeline: voxel grid -> predictions -> supervoxels -> clusters ->
evaluation, plus the multi-scene, benchmark and ablation drivers.

Predictions come from the synthetic oracle unless a prediction file is
given. Everything random is seeded from the config, so two runs with the
same config write byte-identical artifacts (timings excepted, which live in
their own file).
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core import timing
from core.clustering import ClusterResult, InstancePrediction, cluster_scene
from core.config import ClusterSettings, PipelineConfig, save_config
from core.errors import NoGroundTruthError
from core.evaluation import EvalReport, ReportFold, evaluate, format_report, occupancy_cdf
from core.geometry import InstanceGroundTruth, VoxelGrid, extract_ground_truth, voxelize
from core.losses import relative_errors
from core.oracle import PredictionSet, emit_predictions, read_predictions, write_predictions
from core.ply_io import read_cloud, write_grid
from core.scene import CLASS_NAMES, SyntheticScene, synth_scene
from core.schemas import AblationRow, AggregateReport, EvalReportModel, InstanceManifest, TimingReport
from core.supervoxel import SuperVoxelPartition, oversegment
from core.timing import StageTimer

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ABLATION_VARIANTS: Dict[str, Dict[str, bool]] = {
    "full": {},
    "no_feature": {"use_feature": False},
    "no_spatial": {"use_spatial": False},
    "no_occupancy": {"use_occupancy": False},
}


@dataclass
class PipelineResult:
    grid: VoxelGrid
    predictions: PredictionSet
    partition: SuperVoxelPartition
    clusters: ClusterResult
    ground_truth: Optional[List[InstanceGroundTruth]] = None
    report: Optional[EvalReport] = None
    timings: Dict[str, float] = field(default_factory=dict)


def synthesize(config: PipelineConfig) -> SyntheticScene:
    return synth_scene(config.scene, config.voxel.resolution, config.n_classes, config.seed)


def run_scene(
    config: PipelineConfig,
    grid: VoxelGrid,
    gt: Optional[List[InstanceGroundTruth]] = None,
    predictions: Optional[PredictionSet] = None,
    confusable_pairs: Sequence[Tuple[int, int]] = (),
    cluster_settings: Optional[ClusterSettings] = None,
) -> PipelineResult:
    """Run every stage in memory on one grid."""
    timer = StageTimer()
    if predictions is None:
        if gt is None:
            raise NoGroundTruthError("the oracle needs ground truth to emit predictions")
        with timer.stage(timing.NETWORK):
            predictions = emit_predictions(grid, gt, config.oracle, config.n_classes,
                                           config.embedding_dim, confusable_pairs)

    with timer.stage(timing.SUPERVOXEL):
        partition = oversegment(grid, config.supervoxel)
    with timer.stage(timing.CLUSTERING):
        clusters = cluster_scene(grid, predictions, partition, cluster_settings or config.cluster)

    report = None
    if gt is not None:
        report = evaluate(clusters.prediction, gt, config.iou_thresholds, n_voxels=len(grid))
        cdf = occupancy_cdf(relative_errors(predictions, gt))
        report = EvalReport(
            mean_ap=report.mean_ap,
            map50=report.map50,
            map25=report.map25,
            per_class=report.per_class,
            mean_precision=report.mean_precision,
            mean_recall=report.mean_recall,
            thresholds=report.thresholds,
            occupancy_cdf=cdf,
            timings=timer.as_dict(),
        )
    return PipelineResult(
        grid=grid,
        predictions=predictions,
        partition=partition,
        clusters=clusters,
        ground_truth=gt,
        report=report,
        timings=timer.as_dict(),
    )


def write_json(path: Path, text: str) -> None:
    path.write_text(text + "\n", encoding="utf-8")


def instance_grid(grid: VoxelGrid, pred: InstancePrediction) -> VoxelGrid:
    """The grid relabeled with predicted instance ids and their classes; rejected cells get -1."""
    labels = np.full(len(grid), -1, dtype=np.int64)
    for inst in pred.instances:
        labels[pred.voxel_instance == inst.instance_id] = inst.semantic_label
    return grid.with_labels(semantic_labels=labels, instance_labels=pred.voxel_instance)


def write_manifest(path: PathLike, pred: InstancePrediction) -> None:
    write_json(Path(path), InstanceManifest.from_prediction(pred).model_dump_json(indent=2))


def write_cdf_csv(path: PathLike, report: EvalReport) -> None:
    if report.occupancy_cdf is None:
        return
    cdf = report.occupancy_cdf
    lines = ["threshold,fraction"] + [f"{x!r},{y!r}" for x, y in zip(cdf.thresholds.tolist(), cdf.fractions.tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_artifacts(
    result: PipelineResult,
    out_dir: PathLike,
    config: Optional[PipelineConfig] = None,
    cdf_out: Optional[PathLike] = None,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = result.grid
    pred = result.clusters.prediction

    write_grid(out / "grid.ply", grid)
    write_grid(out / "supervoxels.ply", grid, segments=result.partition.assignment)
    write_grid(out / "instances.ply", instance_grid(grid, pred))
    write_predictions(out / "predictions.bin", result.predictions)
    write_manifest(out / "manifest.json", pred)

    timings = TimingReport(
        stages=result.timings,
        total=sum(result.timings.values()),
        n_voxels=len(grid),
        n_supervoxels=result.partition.n_segments,
        n_merges=len(result.clusters.graph.merge_log),
    )
    write_json(out / "timings.json", timings.model_dump_json(indent=2))

    if result.report is not None:
        write_json(out / "report.json", EvalReportModel.from_report(result.report).model_dump_json(indent=2))
        (out / "report.txt").write_text(format_report(result.report, CLASS_NAMES), encoding="utf-8")
        if cdf_out is not None:
            write_cdf_csv(cdf_out, result.report)
    if config is not None:
        save_config(config, out / "config.json")
    logger.info("Artifacts written to %s", out)
    return out


def run_pipeline(
    config: PipelineConfig,
    output_dir: PathLike,
    cloud_path: Optional[PathLike] = None,
    predictions_path: Optional[PathLike] = None,
    cdf_out: Optional[PathLike] = None,
) -> PipelineResult:
    """
    Run one scene and write its artifacts. Without `cloud_path` a synthetic
    scene is generated from the config.
    """
    confusable: Sequence[Tuple[int, int]] = ()
    if cloud_path is None:
        scene = synthesize(config)
        grid, gt = scene.grid, scene.ground_truth
        confusable = scene.confusable_pairs
    else:
        grid = voxelize(read_cloud(cloud_path), config.voxel.resolution)
        try:
            gt = extract_ground_truth(grid)
        except NoGroundTruthError:
            if predictions_path is None:
                raise
            logger.warning("%s has no instance labels, evaluation skipped", cloud_path)
            gt = None

    predictions = None
    if predictions_path is not None:
        predictions = read_predictions(predictions_path, expected_voxels=len(grid))

    result = run_scene(config, grid, gt, predictions, confusable)
    write_artifacts(result, output_dir, config, cdf_out)
    return result


# ---------------------------------------------------------------------------
# Multi-scene fan-out
# ---------------------------------------------------------------------------

def _run_seed(args: Tuple[str, str, int]) -> Tuple[int, Dict[str, float]]:
    config_json, out_dir, seed = args
    config = PipelineConfig.model_validate_json(config_json).with_seed(seed)
    result = run_pipeline(config, Path(out_dir) / f"scene_{seed}")
    assert result.report is not None
    return seed, ReportFold.metrics(result.report)


def run_many(config: PipelineConfig, output_dir: PathLike, seeds: Sequence[int], jobs: int = 1) -> AggregateReport:
    """Independent seeded scenes, optionally across processes. Output does not depend on `jobs`."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(config.model_dump_json(), str(out), int(s)) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_seed, tasks))
    else:
        rows = [_run_seed(t) for t in tasks]

    fold = ReportFold()
    for _, metrics in sorted(rows):
        fold = fold.combine(ReportFold(count=1, sums=metrics))
    aggregate = AggregateReport(scenes=sorted(s for s, _ in rows), means=fold.means())
    write_json(out / "aggregate.json", aggregate.model_dump_json(indent=2))
    logger.info("Ran %d scenes with %d jobs", len(rows), jobs)
    return aggregate


# ---------------------------------------------------------------------------
# Benchmark and ablation
# ---------------------------------------------------------------------------

def bench_config(config: PipelineConfig, target_voxels: int) -> PipelineConfig:
    """Square room whose floor and walls hold about `target_voxels` cells, objects at the default density."""
    res = config.voxel.resolution
    height = max(2, int(round(config.scene.wall_height / res)))
    # floor n^2 plus four walls 4*n*height
    side = (-4 * height + math.sqrt(16 * height ** 2 + 4 * target_voxels)) / 2.0
    side = max(8, int(side))
    density = config.scene.n_objects / (config.scene.room_size[0] * config.scene.room_size[1])
    room = side * res
    n_objects = int(round(density * room * room))
    scene = config.scene.model_copy(update={"room_size": (room, room), "n_objects": n_objects, "layout": "random"})
    return config.model_copy(update={"scene": scene})


@dataclass(frozen=True)
class BenchResult:
    n_voxels: int
    n_supervoxels: int
    n_merges: int
    stages: Dict[str, float]
    report: Optional[EvalReport]

    @property
    def segmentation_and_clustering(self) -> float:
        return self.stages.get(timing.SUPERVOXEL, 0.0) + self.stages.get(timing.CLUSTERING, 0.0)


def bench(config: PipelineConfig, target_voxels: int = 100_000) -> BenchResult:
    cfg = bench_config(config, target_voxels)
    scene = synthesize(cfg)
    result = run_scene(cfg, scene.grid, scene.ground_truth, confusable_pairs=scene.confusable_pairs)
    out = BenchResult(
        n_voxels=len(scene.grid),
        n_supervoxels=result.partition.n_segments,
        n_merges=len(result.clusters.graph.merge_log),
        stages=result.timings,
        report=result.report,
    )
    logger.info("Bench: %d voxels, %d supervoxels, supervoxel+clustering %.3fs",
                out.n_voxels, out.n_supervoxels, out.segmentation_and_clustering)
    return out


def run_ablation(config: PipelineConfig, seeds: Sequence[int]) -> List[AblationRow]:
    """
    Every clustering variant on the same scenes and predictions. Disabling
    occupancy uses r = 1 in the edge weight and skips the ratio filter.
    """
    folds = {name: ReportFold() for name in ABLATION_VARIANTS}
    for seed in seeds:
        cfg = config.with_seed(int(seed))
        scene = synthesize(cfg)
        preds = emit_predictions(scene.grid, scene.ground_truth, cfg.oracle, cfg.n_classes,
                                 cfg.embedding_dim, scene.confusable_pairs)
        partition = oversegment(scene.grid, cfg.supervoxel)
        pairs = scene.grid.neighbor_pairs(26)
        for name, flags in ABLATION_VARIANTS.items():
            settings = cfg.cluster.model_copy(update=flags)
            clusters = cluster_scene(scene.grid, preds, partition, settings, voxel_pairs=pairs)
            report = evaluate(clusters.prediction, scene.ground_truth, cfg.iou_thresholds, n_voxels=len(scene.grid))
            folds[name] = folds[name].add(report)

    rows = []
    for name, fold in folds.items():
        means = fold.means()
        rows.append(AblationRow(variant=name, scenes=fold.count, mean_ap=means.get("mean_ap", 0.0),
                                map50=means.get("map50", 0.0), map25=means.get("map25", 0.0)))
        logger.info("Ablation %-12s mAP@0.5 %.4f", name, rows[-1].map50)
    return rows
