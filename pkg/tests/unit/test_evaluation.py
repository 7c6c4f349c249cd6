"""
Unit tests for instance matching, average precision and the occupancy CDF.
Run: pytest tests/unit/test_evaluation.py -v
"""

import numpy as np
import pytest

from core.clustering import REJECTED, InstancePrediction, PredictedInstance
from core.errors import AlignmentError, EmptyInputError, EmptyInstanceError, InvalidValueError
from core.evaluation import (
    DEFAULT_THRESHOLDS,
    EvalReport,
    MatchResult,
    ReportFold,
    average_precision,
    evaluate,
    format_report,
    instance_iou,
    occupancy_cdf,
    precision_recall_ap,
)
from core.geometry import InstanceGroundTruth


def gt_instance(instance_id, voxels, label=0):
    return InstanceGroundTruth(instance_id=instance_id, voxel_indices=np.asarray(voxels, dtype=np.int64),
                               semantic_label=label, centroid=np.zeros(3))


def prediction(n_voxels, items):
    """items: (voxels, label, confidence) per predicted instance, voxel sets disjoint."""
    voxel_instance = np.full(n_voxels, REJECTED, dtype=np.int64)
    instances = []
    for i, (voxels, label, conf) in enumerate(items):
        voxel_instance[np.asarray(voxels, dtype=np.int64)] = i
        instances.append(PredictedInstance(instance_id=i, semantic_label=label, confidence=conf,
                                           voxel_count=len(voxels), ratio=1.0))
    return InstancePrediction(voxel_instance=voxel_instance, instances=instances)


def brute_force_ap(tp, n_gt):
    """Interpolated precision summed over every recall step of the ranked list."""
    total = 0.0
    for k in range(len(tp)):
        if not tp[k]:
            continue
        best = max(sum(tp[: j + 1]) / (j + 1) for j in range(k, len(tp)))
        total += best / n_gt
    return total


class TestIoU:
    def test_examples(self):
        assert instance_iou(np.array([0, 1, 2]), np.array([1, 2, 3])) == pytest.approx(0.5)
        assert instance_iou(np.array([0, 1]), np.array([0, 1])) == 1.0
        assert instance_iou(np.array([0, 1]), np.array([2])) == 0.0

    def test_duplicates_ignored(self):
        assert instance_iou(np.array([0, 0, 1]), np.array([1, 1])) == pytest.approx(0.5)

    def test_one_side_empty(self):
        assert instance_iou(np.array([], dtype=np.int64), np.array([3])) == 0.0

    def test_both_empty(self):
        with pytest.raises(EmptyInstanceError):
            instance_iou(np.array([], dtype=np.int64), np.array([], dtype=np.int64))


class TestAveragePrecision:
    def test_perfect(self):
        gt = [gt_instance(0, range(10))]
        assert average_precision(prediction(10, [(range(10), 0, 0.9)]), gt, 0, 0.5) == 1.0

    def test_half_recall(self):
        gt = [gt_instance(0, range(5)), gt_instance(1, range(5, 10))]
        assert average_precision(prediction(10, [(range(5), 0, 0.9)]), gt, 0, 0.5) == pytest.approx(0.5)

    def test_no_overlap(self):
        gt = [gt_instance(0, range(5))]
        assert average_precision(prediction(10, [(range(5, 10), 0, 0.9)]), gt, 0, 0.5) == 0.0

    def test_confident_false_positive_first(self):
        gt = [gt_instance(0, range(5))]
        pred = prediction(10, [(range(5, 10), 0, 0.9), (range(5), 0, 0.4)])
        assert average_precision(pred, gt, 0, 0.5) == pytest.approx(0.5)

    def test_class_without_ground_truth(self):
        gt = [gt_instance(0, range(5), label=1)]
        assert average_precision(prediction(10, [(range(5), 0, 0.9)]), gt, 0, 0.5) is None

    def test_wrong_class_is_a_miss(self):
        gt = [gt_instance(0, range(5), label=1)]
        assert average_precision(prediction(10, [(range(5), 0, 0.9)]), gt, 1, 0.5) == 0.0

    def test_threshold_boundary(self):
        gt = [gt_instance(0, range(4))]
        pred = prediction(8, [(range(2, 6), 0, 0.9)])
        # IoU = 2 / 6
        assert average_precision(pred, gt, 0, 0.25) == 1.0
        assert average_precision(pred, gt, 0, 0.5) == 0.0

    def test_no_ground_truth_instances(self):
        with pytest.raises(EmptyInputError):
            precision_recall_ap(MatchResult(np.zeros(0, dtype=bool), np.zeros(0), 0))

    @pytest.mark.parametrize("seed", range(200))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n_pred = int(rng.integers(0, 12))
        tp = rng.random(n_pred) < 0.5
        n_gt = int(tp.sum() + rng.integers(1, 4))
        match = MatchResult(true_positive=tp, confidence=np.sort(rng.random(n_pred))[::-1], n_gt=n_gt)
        assert precision_recall_ap(match) == pytest.approx(brute_force_ap(tp.tolist(), n_gt))

    @pytest.mark.parametrize("seed", range(20))
    def test_non_increasing_above_half(self, seed):
        rng = np.random.default_rng(seed)
        n = 60
        gt_cuts = np.sort(rng.choice(np.arange(1, n), size=4, replace=False))
        pred_cuts = np.sort(rng.choice(np.arange(1, n), size=5, replace=False))
        gt = [gt_instance(i, block) for i, block in enumerate(np.split(np.arange(n), gt_cuts))]
        items = [(block, 0, float(c)) for block, c in zip(np.split(np.arange(n), pred_cuts), rng.random(6))]
        pred = prediction(n, items)
        aps = [average_precision(pred, gt, 0, t) for t in DEFAULT_THRESHOLDS]
        assert all(a >= b - 1e-12 for a, b in zip(aps, aps[1:]))


class TestEvaluate:
    def test_perfect_scene(self):
        gt = [gt_instance(0, range(4), 0), gt_instance(1, range(4, 9), 1), gt_instance(2, range(9, 12), 1)]
        pred = prediction(12, [(range(4), 0, 1.0), (range(4, 9), 1, 1.0), (range(9, 12), 1, 0.5)])
        report = evaluate(pred, gt, n_voxels=12)
        assert report.mean_ap == 1.0
        assert report.map50 == 1.0
        assert report.mean_precision == 1.0
        assert report.mean_recall == 1.0
        assert report.per_class[1].n_gt == 2

    def test_extra_class_skipped(self):
        gt = [gt_instance(0, range(4), 0)]
        pred = prediction(8, [(range(4), 0, 1.0), (range(4, 8), 3, 1.0)])
        report = evaluate(pred, gt)
        assert list(report.per_class) == [0]
        assert report.mean_ap == 1.0

    def test_unlabeled_ground_truth_ignored(self):
        gt = [gt_instance(0, range(4), 0), gt_instance(1, range(4, 8), -1)]
        report = evaluate(prediction(8, [(range(4), 0, 1.0)]), gt)
        assert list(report.per_class) == [0]

    def test_precision_and_recall(self):
        gt = [gt_instance(0, range(4)), gt_instance(1, range(4, 8))]
        pred = prediction(12, [(range(4), 0, 0.9), (range(8, 12), 0, 0.8)])
        scores = evaluate(pred, gt).per_class[0]
        assert scores.precision == pytest.approx(0.5)
        assert scores.recall == pytest.approx(0.5)

    def test_grid_mismatch(self):
        gt = [gt_instance(0, range(4))]
        with pytest.raises(AlignmentError):
            evaluate(prediction(4, [(range(4), 0, 1.0)]), gt, n_voxels=5)

    def test_ground_truth_outside_prediction(self):
        gt = [gt_instance(0, range(6))]
        with pytest.raises(AlignmentError):
            evaluate(prediction(4, [(range(4), 0, 1.0)]), gt)

    def test_format_report(self):
        gt = [gt_instance(0, range(4), 0)]
        text = format_report(evaluate(prediction(4, [(range(4), 0, 1.0)]), gt), class_names=["wall"])
        assert "wall" in text
        assert "average" in text


class TestOccupancyCdf:
    def test_fractions(self):
        cdf = occupancy_cdf([0.1, 0.2, 0.5])
        assert cdf.fraction_at_anchor == pytest.approx(2 / 3)
        assert cdf.fractions[-1] == 1.0
        assert 0.3 in cdf.thresholds.tolist()
        assert cdf.n_instances == 3

    def test_max_beyond_unit(self):
        cdf = occupancy_cdf([0.0, 2.0])
        assert cdf.thresholds[-1] == 2.0
        assert cdf.fractions[0] == pytest.approx(0.5)
        assert cdf.fractions[list(cdf.thresholds).index(1.0)] == pytest.approx(0.5)
        assert cdf.fractions[-1] == 1.0

    def test_monotone(self):
        cdf = occupancy_cdf(np.random.default_rng(0).exponential(0.3, size=50))
        assert np.all(np.diff(cdf.fractions) >= 0)
        assert np.all(np.diff(cdf.thresholds) > 0)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            occupancy_cdf([])

    def test_negative(self):
        with pytest.raises(InvalidValueError):
            occupancy_cdf([-0.1, 0.2])


def report(value):
    return EvalReport(mean_ap=value, map50=value, map25=value, per_class={},
                      mean_precision=value, mean_recall=value, thresholds=())


class TestReportFold:
    def test_associative(self):
        a, b, c = (ReportFold().add(report(v)) for v in (0.2, 0.5, 0.9))
        left = a.combine(b).combine(c)
        right = a.combine(b.combine(c))
        assert left.count == right.count == 3
        for key in left.sums:
            assert left.sums[key] == pytest.approx(right.sums[key])

    def test_means(self):
        fold = ReportFold().add(report(0.2)).add(report(0.6))
        assert fold.means()["mean_ap"] == pytest.approx(0.4)

    def test_empty(self):
        assert ReportFold().means() == {}


def reference_class_ap(pred_items, gt_sets, threshold):
    """Greedy matching by explicit set arithmetic, then the brute-force AP."""
    ranked = sorted(pred_items, key=lambda item: (-item[2], item[0]))
    taken = [False] * len(gt_sets)
    tp = []
    for _, voxels, _ in ranked:
        best, best_iou = None, -1.0
        for j, g in enumerate(gt_sets):
            if taken[j]:
                continue
            iou = len(voxels & g) / len(voxels | g)
            if iou >= threshold and iou > best_iou:
                best, best_iou = j, iou
        if best is not None:
            taken[best] = True
        tp.append(best is not None)
    return brute_force_ap(tp, len(gt_sets))


class TestExhaustiveReference:
    @pytest.mark.parametrize("seed", range(200))
    def test_matches_reference(self, seed):
        rng = np.random.default_rng(seed)
        n = 40
        gt_cuts = np.sort(rng.choice(np.arange(1, n), size=int(rng.integers(1, 8)), replace=False))
        gt_blocks = np.split(np.arange(n), gt_cuts)
        gt_labels = rng.integers(0, 2, size=len(gt_blocks))
        gt = [gt_instance(i, b, int(c)) for i, (b, c) in enumerate(zip(gt_blocks, gt_labels))]

        pred_cuts = np.sort(rng.choice(np.arange(1, n), size=int(rng.integers(1, 9)), replace=False))
        pred_blocks = [b for b in np.split(np.arange(n), pred_cuts) if rng.random() < 0.85]
        items = [(b, int(rng.integers(0, 2)), float(rng.random())) for b in pred_blocks]
        pred = prediction(n, items)

        report = evaluate(pred, gt)
        for cls, scores in report.per_class.items():
            gt_sets = [set(g.voxel_indices.tolist()) for g in gt if g.semantic_label == cls]
            cls_items = [(i, set(np.asarray(v).tolist()), c) for i, (v, lab, c) in enumerate(items) if lab == cls]
            expected = [reference_class_ap(cls_items, gt_sets, t) for t in DEFAULT_THRESHOLDS]
            assert scores.ap == pytest.approx(np.mean(expected), abs=1e-9)
            assert scores.ap50 == pytest.approx(reference_class_ap(cls_items, gt_sets, 0.5), abs=1e-9)
            assert scores.ap25 == pytest.approx(reference_class_ap(cls_items, gt_sets, 0.25), abs=1e-9)


class TestCdfCounting:
    @pytest.mark.parametrize("seed", range(10))
    def test_fractions_match_direct_count(self, seed):
        values = np.random.default_rng(seed).lognormal(-1.5, 0.8, size=37)
        cdf = occupancy_cdf(values)
        assert cdf.fraction_at_anchor == sum(1 for v in values if v <= 0.3) / 37
        for x, f in zip(cdf.thresholds, cdf.fractions):
            assert f == sum(1 for v in values if v <= x) / 37
