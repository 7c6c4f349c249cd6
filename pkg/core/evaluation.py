"""
Instance-segmentation metrics on a shared voxel grid.

Matching is greedy in confidence order: each prediction takes the unmatched
ground-truth instance of its class with the highest IoU, provided the IoU
reaches the threshold. AP is the area under the all-point interpolated
precision/recall curve. Classes without ground truth are left out of every
mean.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.clustering import InstancePrediction, PredictedInstance
from core.errors import AlignmentError, EmptyInputError, EmptyInstanceError, InvalidValueError
from core.geometry import InstanceGroundTruth, instance_index, instance_sizes

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
CDF_ANCHOR = 0.3


def instance_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    a = np.unique(np.asarray(pred, dtype=np.int64))
    b = np.unique(np.asarray(gt, dtype=np.int64))
    if a.size == 0 and b.size == 0:
        raise EmptyInstanceError("IoU of two empty instances is undefined")
    inter = np.intersect1d(a, b, assume_unique=True).size
    return inter / (a.size + b.size - inter)


@dataclass(frozen=True)
class MatchResult:
    """Outcome of greedy matching for one class at one threshold."""

    true_positive: np.ndarray   # per prediction, in ranked order
    confidence: np.ndarray
    n_gt: int

    @property
    def n_tp(self) -> int:
        return int(self.true_positive.sum())


def _iou_matrix(
    preds: Sequence[Tuple[PredictedInstance, np.ndarray]],
    gt: Sequence[InstanceGroundTruth],
    n_voxels: int,
) -> np.ndarray:
    if not preds or not gt:
        return np.zeros((len(preds), len(gt)))
    owner = instance_index(list(gt), n_voxels)
    gt_sizes = instance_sizes(gt).astype(np.float64)
    out = np.zeros((len(preds), len(gt)))
    for row, (_, voxels) in enumerate(preds):
        hits = owner[voxels]
        inter = np.bincount(hits[hits >= 0], minlength=len(gt)).astype(np.float64)
        out[row] = inter / (voxels.shape[0] + gt_sizes - inter)
    return out


def _ranked(preds: Sequence[Tuple[PredictedInstance, np.ndarray]]) -> List[Tuple[PredictedInstance, np.ndarray]]:
    return sorted(preds, key=lambda item: (-item[0].confidence, item[0].instance_id))


def match_class(
    preds: Sequence[Tuple[PredictedInstance, np.ndarray]],
    gt: Sequence[InstanceGroundTruth],
    threshold: float,
    n_voxels: int,
) -> MatchResult:
    ranked = _ranked(preds)
    iou = _iou_matrix(ranked, gt, n_voxels)
    taken = np.zeros(len(gt), dtype=bool)
    tp = np.zeros(len(ranked), dtype=bool)
    for row in range(len(ranked)):
        candidates = np.where(~taken & (iou[row] >= threshold), iou[row], -1.0)
        if candidates.size and candidates.max() >= 0:
            best = int(np.argmax(candidates))
            taken[best] = True
            tp[row] = True
    conf = np.asarray([p.confidence for p, _ in ranked], dtype=np.float64)
    return MatchResult(true_positive=tp, confidence=conf, n_gt=len(gt))


def precision_recall_ap(match: MatchResult) -> float:
    if match.n_gt == 0:
        raise EmptyInputError("AP needs at least one ground-truth instance")
    if match.true_positive.size == 0:
        return 0.0
    tp = np.cumsum(match.true_positive)
    fp = np.cumsum(~match.true_positive)
    recall = tp / match.n_gt
    precision = tp / (tp + fp)

    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    # precision envelope, right to left
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _by_class(
    pred: InstancePrediction,
    gt: Sequence[InstanceGroundTruth],
) -> Tuple[Dict[int, List[Tuple[PredictedInstance, np.ndarray]]], Dict[int, List[InstanceGroundTruth]]]:
    sets = pred.voxel_sets()
    preds: Dict[int, List[Tuple[PredictedInstance, np.ndarray]]] = {}
    for inst in pred.instances:
        preds.setdefault(inst.semantic_label, []).append((inst, sets[inst.instance_id]))
    gts: Dict[int, List[InstanceGroundTruth]] = {}
    for g in gt:
        if g.semantic_label >= 0:
            gts.setdefault(g.semantic_label, []).append(g)
    return preds, gts


def average_precision(
    pred: InstancePrediction,
    gt: Sequence[InstanceGroundTruth],
    class_id: int,
    threshold: float,
) -> Optional[float]:
    """AP of one class at one IoU threshold; None when the class has no ground truth."""
    preds, gts = _by_class(pred, gt)
    if class_id not in gts:
        return None
    match = match_class(preds.get(class_id, []), gts[class_id], threshold, pred.voxel_instance.shape[0])
    return precision_recall_ap(match)


@dataclass(frozen=True)
class ClassScores:
    ap: float
    ap50: float
    ap25: float
    precision: float
    recall: float
    n_gt: int
    n_pred: int


@dataclass(frozen=True)
class OccupancyCdf:
    thresholds: np.ndarray
    fractions: np.ndarray
    fraction_at_anchor: float
    n_instances: int


@dataclass(frozen=True)
class EvalReport:
    mean_ap: float
    map50: float
    map25: float
    per_class: Dict[int, ClassScores]
    mean_precision: float
    mean_recall: float
    thresholds: Tuple[float, ...]
    occupancy_cdf: Optional[OccupancyCdf] = None
    timings: Dict[str, float] = field(default_factory=dict)


def evaluate(
    pred: InstancePrediction,
    gt: Sequence[InstanceGroundTruth],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    n_voxels: Optional[int] = None,
) -> EvalReport:
    size = pred.voxel_instance.shape[0]
    if n_voxels is not None and n_voxels != size:
        raise AlignmentError(f"prediction covers {size} voxels, grid has {n_voxels}")
    for g in gt:
        if g.voxel_indices.size and g.voxel_indices.max() >= size:
            raise AlignmentError(f"ground-truth instance {g.instance_id} lies outside the predicted grid")

    preds, gts = _by_class(pred, gt)
    per_class: Dict[int, ClassScores] = {}
    for cls in sorted(gts):
        cls_preds, cls_gt = preds.get(cls, []), gts[cls]
        aps = [precision_recall_ap(match_class(cls_preds, cls_gt, t, size)) for t in thresholds]
        m50 = match_class(cls_preds, cls_gt, 0.5, size)
        m25 = match_class(cls_preds, cls_gt, 0.25, size)
        per_class[cls] = ClassScores(
            ap=float(np.mean(aps)),
            ap50=precision_recall_ap(m50),
            ap25=precision_recall_ap(m25),
            precision=m50.n_tp / len(cls_preds) if cls_preds else 0.0,
            recall=m50.n_tp / len(cls_gt),
            n_gt=len(cls_gt),
            n_pred=len(cls_preds),
        )
    skipped = sorted(set(preds) - set(gts))
    if skipped:
        logger.debug("Classes without ground truth skipped: %s", skipped)

    def macro(attr: str) -> float:
        if not per_class:
            return 0.0
        return float(np.mean([getattr(s, attr) for s in per_class.values()]))

    report = EvalReport(
        mean_ap=macro("ap"),
        map50=macro("ap50"),
        map25=macro("ap25"),
        per_class=per_class,
        mean_precision=macro("precision"),
        mean_recall=macro("recall"),
        thresholds=tuple(float(t) for t in thresholds),
    )
    logger.info("mAP %.4f | mAP@0.5 %.4f | mAP@0.25 %.4f over %d classes",
                report.mean_ap, report.map50, report.map25, len(per_class))
    return report


def occupancy_cdf(values: Sequence[float], thresholds: Optional[Sequence[float]] = None) -> OccupancyCdf:
    """
    Empirical CDF of relative occupancy errors. The largest value is always
    one of the abscissae, so the last fraction is 1.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise EmptyInputError("no relative errors to summarize")
    if v.min() < 0:
        raise InvalidValueError("relative errors must be non-negative")
    base = np.linspace(0.0, 1.0, 21) if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    xs = np.unique(np.concatenate([base, [CDF_ANCHOR, v.max()]]))
    ordered = np.sort(v)
    fractions = np.searchsorted(ordered, xs, side="right") / v.size
    anchor = float(np.count_nonzero(v <= CDF_ANCHOR)) / v.size
    return OccupancyCdf(thresholds=xs, fractions=fractions, fraction_at_anchor=anchor, n_instances=int(v.size))


def format_report(report: EvalReport, class_names: Optional[Sequence[str]] = None) -> str:
    """Plain-text per-class table followed by the averages."""
    width = 80
    lines = ["#" * width]
    lines.append(f"{'class':<18}{'AP':>10}{'AP50':>10}{'AP25':>10}{'Prec':>10}{'Rec':>10}{'#gt':>6}{'#pred':>6}")
    lines.append("#" * width)
    for cls, s in report.per_class.items():
        name = class_names[cls] if class_names and cls < len(class_names) else str(cls)
        lines.append(
            f"{name:<18}{s.ap:>10.3f}{s.ap50:>10.3f}{s.ap25:>10.3f}"
            f"{s.precision:>10.3f}{s.recall:>10.3f}{s.n_gt:>6d}{s.n_pred:>6d}"
        )
    lines.append("-" * width)
    lines.append(
        f"{'average':<18}{report.mean_ap:>10.3f}{report.map50:>10.3f}{report.map25:>10.3f}"
        f"{report.mean_precision:>10.3f}{report.mean_recall:>10.3f}"
    )
    if report.occupancy_cdf is not None:
        lines.append(f"occupancy error <= {CDF_ANCHOR}: {report.occupancy_cdf.fraction_at_anchor:.3f} "
                     f"of {report.occupancy_cdf.n_instances} instances")
    if report.timings:
        lines.append("timings (s): " + ", ".join(f"{k} {v:.3f}" for k, v in report.timings.items()))
    return "\n".join(lines) + "\n"


@dataclass
class ReportFold:
    """Running sums for averaging reports across scenes; combine() is associative."""

    count: int = 0
    sums: Dict[str, float] = field(default_factory=dict)

    @staticmethod
    def metrics(report: EvalReport) -> Dict[str, float]:
        return {
            "mean_ap": report.mean_ap,
            "map50": report.map50,
            "map25": report.map25,
            "mean_precision": report.mean_precision,
            "mean_recall": report.mean_recall,
        }

    def add(self, report: EvalReport) -> "ReportFold":
        return self.combine(ReportFold(count=1, sums=self.metrics(report)))

    def combine(self, other: "ReportFold") -> "ReportFold":
        keys = set(self.sums) | set(other.sums)
        return ReportFold(
            count=self.count + other.count,
            sums={k: self.sums.get(k, 0.0) + other.sums.get(k, 0.0) for k in sorted(keys)},
        )

    def means(self) -> Dict[str, float]:
        if self.count == 0:
            return {}
        return {k: v / self.count for k, v in self.sums.items()}
