"""
Unit tests for occupancy-aware supervoxel clustering.
Run: pytest tests/unit/test_clustering.py -v
"""

import numpy as np
import pytest

from core.config import ClusterSettings
from core.errors import AlignmentError, ConfigError
from core.clustering import (
    REJECTED,
    SuperVoxelStats,
    aggregate,
    build_cluster_graph,
    cluster_scene,
    confidence_score,
    edge_weight,
    finalize,
    merge_loop,
    segment_adjacency,
)
from core.losses import Membership
from core.supervoxel import SuperVoxelPartition, oversegment


def stat(seg, size, occupancy, feature=(0.0, 0.0), spatial=(0.0, 0.0, 0.0), label=0,
         sigma_s=0.3, sigma_d=1.0, n_classes=2):
    hist = np.zeros(n_classes)
    hist[label] = size
    return SuperVoxelStats(
        segments=(seg,),
        size=size,
        feature=np.asarray(feature, dtype=np.float64),
        spatial=np.asarray(spatial, dtype=np.float64),
        occupancy=float(occupancy),
        sigma_s=sigma_s,
        sigma_d=sigma_d,
        histogram=hist,
    )


def chain_partition(sizes):
    sizes = np.asarray(sizes)
    return SuperVoxelPartition(assignment=np.repeat(np.arange(sizes.size), sizes), sizes=sizes)


def naive_merge(graph, t0):
    """Full rescan of every edge before each merge."""
    while True:
        best = None
        for a, b, w in graph.edges():
            if w > t0 and (best is None or w > best[2]):
                best = (a, b, w)
        if best is None:
            return graph
        graph.merge(*best)


class TestEdgeWeight:
    def test_complete_instance(self):
        w = edge_weight(stat(0, 50, 100), stat(1, 50, 100), ClusterSettings())
        assert w == pytest.approx(1.0)

    def test_fragments_boosted(self):
        w = edge_weight(stat(0, 25, 100), stat(1, 25, 100), ClusterSettings())
        assert w == pytest.approx(2.0)

    def test_over_merge_penalized(self):
        w = edge_weight(stat(0, 100, 100), stat(1, 100, 100), ClusterSettings())
        assert w == pytest.approx(0.5)

    def test_ratio_floor(self):
        w = edge_weight(stat(0, 10, 100), stat(1, 10, 100), ClusterSettings())
        assert w == pytest.approx(2.0)

    def test_feature_and_spatial_terms(self):
        a = stat(0, 50, 100, feature=(0.0, 0.0), spatial=(0.0, 0.0, 0.0))
        b = stat(1, 50, 100, feature=(0.3, 0.0), spatial=(0.0, 2.0, 0.0))
        assert edge_weight(a, b, ClusterSettings()) == pytest.approx(np.exp(-1.0 - 4.0))
        assert edge_weight(a, b, ClusterSettings(use_feature=False)) == pytest.approx(np.exp(-4.0))
        assert edge_weight(a, b, ClusterSettings(use_spatial=False)) == pytest.approx(np.exp(-1.0))

    def test_occupancy_off(self):
        w = edge_weight(stat(0, 100, 100), stat(1, 100, 100), ClusterSettings(use_occupancy=False))
        assert w == pytest.approx(1.0)

    def test_symmetric(self):
        a = stat(0, 30, 80, feature=(0.1, 0.2), spatial=(0.3, 0.0, 0.1))
        b = stat(1, 20, 60, feature=(0.0, -0.1), spatial=(0.0, 0.2, 0.0))
        assert edge_weight(a, b, ClusterSettings()) == pytest.approx(edge_weight(b, a, ClusterSettings()))


class TestStats:
    def test_merged_with(self):
        merged = stat(3, 10, 40, feature=(1.0, 0.0)).merged_with(stat(1, 30, 80, feature=(0.0, 1.0), label=1))
        assert merged.segments == (1, 3)
        assert merged.size == 40
        assert np.allclose(merged.feature, [0.25, 0.75])
        assert merged.occupancy == pytest.approx(70.0)
        assert merged.histogram.tolist() == [10.0, 30.0]
        assert merged.semantic_label == 1

    def test_ratio(self):
        assert stat(0, 2, 100).ratio == pytest.approx(0.02)

    def test_confidence(self):
        s = stat(0, 10, 20)
        s = SuperVoxelStats(s.segments, s.size, s.feature, s.spatial, s.occupancy, s.sigma_s, s.sigma_d,
                            np.array([8.0, 2.0]))
        assert confidence_score(s) == pytest.approx(0.4)
        assert confidence_score(s, use_occupancy=False) == pytest.approx(0.8)

    def test_confidence_over_merged(self):
        assert confidence_score(stat(0, 40, 20)) == pytest.approx(0.5)


class TestAggregate:
    def test_ground_truth_partition_is_complete(self, scene, predictions):
        owner = Membership.from_ground_truth(scene.ground_truth, len(scene.grid))
        partition = SuperVoxelPartition(assignment=owner.owner, sizes=owner.sizes)
        stats = aggregate(partition, predictions, scene.grid)
        assert len(stats) == len(scene.ground_truth)
        for s, g in zip(stats, scene.ground_truth):
            assert s.ratio == pytest.approx(1.0)
            assert np.allclose(s.spatial, g.centroid)
            assert s.semantic_label == g.semantic_label

    def test_misaligned_partition(self, scene, predictions):
        partition = chain_partition([3, 2])
        with pytest.raises(AlignmentError):
            aggregate(partition, predictions, scene.grid)

    def test_segment_adjacency(self):
        partition = SuperVoxelPartition(assignment=np.array([0, 0, 1, 2]), sizes=np.array([2, 1, 1]))
        pairs = np.array([[0, 1], [1, 2], [2, 3], [0, 3], [3, 0]])
        assert segment_adjacency(partition, pairs).tolist() == [[0, 1], [0, 2], [1, 2]]


class TestMergeLoop:
    @staticmethod
    def random_graph(rng, settings):
        n = int(rng.integers(3, 31))
        stats = [
            stat(i, int(rng.integers(5, 30)), float(rng.uniform(20, 80)),
                 feature=rng.normal(0.0, 0.2, size=2), spatial=rng.normal(0.0, 0.3, size=3),
                 label=int(rng.integers(0, 2)))
            for i in range(n)
        ]
        pairs = [(i, i + 1) for i in range(n - 1)]
        pairs += [tuple(sorted(rng.choice(n, size=2, replace=False))) for _ in range(n)]
        return lambda: build_cluster_graph(stats, np.asarray(pairs), settings)

    @pytest.mark.parametrize("gating", [False, True])
    def test_matches_full_rescan(self, gating):
        rng = np.random.default_rng(11)
        settings = ClusterSettings(semantic_gating=gating)
        merged_any = False
        for _ in range(100):
            build = self.random_graph(rng, settings)
            fast = merge_loop(build(), settings.t0)
            slow = naive_merge(build(), settings.t0)
            assert [(m.a, m.b, m.result) for m in fast.merge_log] == [(m.a, m.b, m.result) for m in slow.merge_log]
            assert sorted(fast.vertices) == sorted(slow.vertices)
            merged_any = merged_any or bool(fast.merge_log)
        assert merged_any

    def test_stops_below_threshold(self):
        settings = ClusterSettings()
        graph = merge_loop(build_cluster_graph(
            [stat(0, 50, 100), stat(1, 50, 100, spatial=(3.0, 0.0, 0.0))], np.array([[0, 1]]), settings
        ), settings.t0)
        assert len(graph) == 2
        assert graph.merge_log == []

    def test_fresh_ids(self):
        settings = ClusterSettings()
        graph = merge_loop(build_cluster_graph(
            [stat(0, 25, 100), stat(1, 25, 100), stat(2, 25, 100)], np.array([[0, 1], [1, 2]]), settings
        ), settings.t0)
        results = [m.result for m in graph.merge_log]
        assert results == list(range(3, 3 + len(results)))
        assert list(graph.vertices) == [results[-1]]

    def test_semantic_gating(self):
        stats = [stat(0, 50, 100, label=0), stat(1, 50, 100, label=1)]
        gated = ClusterSettings(semantic_gating=True)
        assert len(merge_loop(build_cluster_graph(stats, np.array([[0, 1]]), gated), 0.5)) == 2
        open_ = ClusterSettings()
        assert len(merge_loop(build_cluster_graph(stats, np.array([[0, 1]]), open_), 0.5)) == 1

    @pytest.mark.parametrize("t0", [0.0, 2.0, -1.0])
    def test_invalid_threshold(self, t0):
        settings = ClusterSettings()
        with pytest.raises(ConfigError) as exc:
            merge_loop(build_cluster_graph([stat(0, 5, 5)], np.zeros((0, 2)), settings), t0)
        assert exc.value.field == "cluster.t0"


class TestFinalize:
    @pytest.fixture
    def partition(self):
        # segment 0 starts after segment 1 in voxel order
        return SuperVoxelPartition(assignment=np.array([1, 1, 0, 0, 0, 2]), sizes=np.array([3, 2, 1]))

    def stats(self):
        return [stat(0, 3, 30), stat(1, 2, 2), stat(2, 1, 1)]

    def test_ratio_filter_and_order(self, partition):
        settings = ClusterSettings(min_voxels=1)
        graph = build_cluster_graph(self.stats(), np.zeros((0, 2)), settings)
        pred = finalize(graph, partition, settings)
        assert pred.voxel_instance.tolist() == [0, 0, REJECTED, REJECTED, REJECTED, 1]
        assert [i.voxel_count for i in pred.instances] == [2, 1]
        assert [i.instance_id for i in pred.instances] == [0, 1]

    def test_no_ratio_filter_without_occupancy(self, partition):
        settings = ClusterSettings(min_voxels=1, use_occupancy=False)
        graph = build_cluster_graph(self.stats(), np.zeros((0, 2)), settings)
        pred = finalize(graph, partition, settings)
        assert pred.voxel_instance.tolist() == [0, 0, 1, 1, 1, 2]

    def test_min_voxels(self, partition):
        settings = ClusterSettings(min_voxels=2)
        graph = build_cluster_graph(self.stats(), np.zeros((0, 2)), settings)
        pred = finalize(graph, partition, settings)
        assert len(pred.instances) == 1
        assert pred.voxel_sets()[0].tolist() == [0, 1]


class TestOccupancyAblation:
    """Two complete objects, each split in two, lying side by side in embedding space."""

    def run(self, settings):
        stats = [
            stat(0, 50, 100, feature=(0.0, 0.0), spatial=(0.0, 0.0, 0.0)),
            stat(1, 50, 100, feature=(0.0, 0.0), spatial=(0.0, 0.0, 0.0)),
            stat(2, 50, 100, feature=(0.1, 0.0), spatial=(0.2, 0.0, 0.0)),
            stat(3, 50, 100, feature=(0.1, 0.0), spatial=(0.2, 0.0, 0.0)),
        ]
        graph = build_cluster_graph(stats, np.array([[0, 1], [1, 2], [2, 3]]), settings)
        merge_loop(graph, settings.t0)
        return finalize(graph, chain_partition([50, 50, 50, 50]), settings)

    def test_occupancy_keeps_objects_apart(self):
        pred = self.run(ClusterSettings())
        assert len(pred.instances) == 2
        assert pred.voxel_instance.tolist() == [0] * 100 + [1] * 100

    def test_without_occupancy_objects_merge(self):
        pred = self.run(ClusterSettings(use_occupancy=False))
        assert len(pred.instances) == 1


class TestClusterScene:
    def test_oracle_recovers_instances(self, scene, predictions, config):
        partition = oversegment(scene.grid, config.supervoxel)
        result = cluster_scene(scene.grid, predictions, partition, config.cluster)
        assert len(result.prediction.instances) == len(scene.ground_truth)
        assert np.all(result.prediction.voxel_instance != REJECTED)


class TestMergeIdentity:
    def test_aggregate_of_union_equals_merge(self, scene, predictions):
        owner = Membership.from_ground_truth(scene.ground_truth, len(scene.grid)).owner
        whole = SuperVoxelPartition(assignment=owner, sizes=np.bincount(owner))

        split = owner.copy()
        first = scene.ground_truth[0].voxel_indices
        extra = int(owner.max()) + 1
        split[first[first.size // 2:]] = extra
        halves = SuperVoxelPartition(assignment=split, sizes=np.bincount(split))

        expected = aggregate(whole, predictions, scene.grid)[0]
        parts = aggregate(halves, predictions, scene.grid)
        merged = parts[0].merged_with(parts[extra])

        assert merged.size == expected.size
        assert np.allclose(merged.feature, expected.feature)
        assert np.allclose(merged.spatial, expected.spatial)
        assert merged.occupancy == pytest.approx(expected.occupancy)
        assert merged.sigma_s == pytest.approx(expected.sigma_s)
        assert np.array_equal(merged.histogram, expected.histogram)
