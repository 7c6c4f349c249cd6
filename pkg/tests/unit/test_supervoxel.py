"""
Unit tests for supervoxel over-segmentation.
Run: pytest tests/unit/test_supervoxel.py -v
"""

import numpy as np
import pytest

from core.config import SupervoxelSettings
from core.errors import ConfigError, EmptyInputError, InvalidGeometryError, PipelineError
from core.supervoxel import (
    AdjacencyEdge,
    EdgeList,
    build_adjacency,
    dissimilarity,
    oversegment,
    segment,
)


def two_cells(color_q=(0.5, 0.5, 0.5), normal_p=(0.0, 0.0, 1.0), normal_q=(0.0, 0.0, 1.0),
              centroid_p=(0.0, 0.0, 0.0), centroid_q=(1.0, 0.0, 0.0)):
    colors = np.asarray([(0.5, 0.5, 0.5), color_q])
    normals = np.asarray([normal_p, normal_q], dtype=np.float64)
    centroids = np.asarray([centroid_p, centroid_q], dtype=np.float64)
    return colors, normals, centroids, np.array([[0, 1]])


class TestDissimilarity:
    def test_identical_cells(self):
        colors, normals, centroids, pairs = two_cells()
        assert dissimilarity(colors, normals, centroids, pairs, 1.0, 4.0, 0.25)[0] == 0.0

    def test_color_term(self):
        colors, normals, centroids, pairs = two_cells(color_q=(0.5, 0.5, 0.8))
        w = dissimilarity(colors, normals, centroids, pairs, 2.0, 4.0, 0.25)[0]
        assert w == pytest.approx(0.6)

    def test_convex_edge(self):
        # lid cell above the side cell of a box
        colors, normals, centroids, pairs = two_cells(
            normal_p=(0.0, 0.0, 1.0), normal_q=(1.0, 0.0, 0.0),
            centroid_p=(0.0, 0.0, 1.0), centroid_q=(1.0, 0.0, 0.0),
        )
        assert dissimilarity(colors, normals, centroids, pairs, 1.0, 4.0, 0.25)[0] == pytest.approx(4.0)

    def test_concave_edge_costs_more(self):
        # floor cell next to the foot of a wall
        colors, normals, centroids, pairs = two_cells(
            normal_p=(0.0, 0.0, 1.0), normal_q=(1.0, 0.0, 0.0),
            centroid_p=(1.0, 0.0, 0.0), centroid_q=(0.0, 0.0, 1.0),
        )
        assert dissimilarity(colors, normals, centroids, pairs, 1.0, 4.0, 0.25)[0] == pytest.approx(16.0)


class TestEdgeList:
    def test_self_edge(self):
        with pytest.raises(InvalidGeometryError):
            EdgeList(np.array([[1, 1]]), np.array([0.1]))

    def test_negative_weight(self):
        with pytest.raises(InvalidGeometryError):
            EdgeList(np.array([[0, 1]]), np.array([-0.1]))

    def test_orientation_canonical(self):
        edges = EdgeList.from_edges([AdjacencyEdge(3, 1, 0.5)])
        assert edges.pairs.tolist() == [[1, 3]]
        assert list(edges) == [AdjacencyEdge(1, 3, 0.5)]


def chain(*edges):
    return EdgeList.from_edges([AdjacencyEdge(p, q, w) for p, q, w in edges])


class TestSegment:
    def test_expensive_edge_separates(self):
        part = segment(chain((0, 1, 0.01), (2, 3, 0.01), (1, 2, 5.0)), 4, k=0.06, min_size=1)
        assert part.assignment.tolist() == [0, 0, 1, 1]
        assert part.sizes.tolist() == [2, 2]

    def test_min_size_forces_merge(self):
        part = segment(chain((0, 1, 0.01), (2, 3, 0.01), (1, 2, 5.0)), 4, k=0.06, min_size=3)
        assert part.n_segments == 1

    def test_zero_edges_join(self):
        part = segment(chain((0, 1, 0.0), (1, 2, 0.0)), 4, k=0.06, min_size=1)
        assert part.assignment.tolist() == [0, 0, 0, 1]

    def test_ids_follow_first_voxel(self):
        part = segment(chain((0, 2, 0.0)), 3, k=0.06, min_size=1)
        assert part.assignment.tolist() == [0, 1, 0]

    def test_large_k_merges_everything(self):
        part = segment(chain((0, 1, 1.0), (1, 2, 2.0)), 3, k=100.0, min_size=1)
        assert part.n_segments == 1

    def test_input_order_irrelevant(self):
        rng = np.random.default_rng(2)
        n = 60
        pairs = np.array([(i, j) for i in range(n) for j in range(i + 1, min(n, i + 4))])
        weights = np.round(rng.uniform(0.0, 0.2, size=pairs.shape[0]), 2)
        a = segment(EdgeList(pairs, weights), n, 0.06, 2)
        perm = rng.permutation(pairs.shape[0])
        b = segment(EdgeList(pairs[perm][:, ::-1], weights[perm]), n, 0.06, 2)
        assert np.array_equal(a.assignment, b.assignment)

    def test_members(self):
        part = segment(chain((0, 2, 0.0)), 3, k=0.06, min_size=1)
        assert [m.tolist() for m in part.members()] == [[0, 2], [1]]

    @pytest.mark.parametrize("kwargs,error", [
        ({"n_voxels": 0}, EmptyInputError),
        ({"k": 0.0}, ConfigError),
        ({"min_size": 0}, ConfigError),
    ])
    def test_invalid_arguments(self, kwargs, error):
        args = {"edges": chain((0, 1, 0.1)), "n_voxels": 2, "k": 0.06, "min_size": 1}
        args.update(kwargs)
        with pytest.raises(error):
            segment(**args)

    def test_bad_scale_names_config_field(self):
        with pytest.raises(PipelineError) as exc:
            segment(chain((0, 1, 0.1)), 2, k=-1.0, min_size=1)
        assert exc.value.field == "supervoxel.k"

    def test_endpoint_out_of_range(self):
        with pytest.raises(InvalidGeometryError):
            segment(chain((0, 5, 0.1)), 3, 0.06, 1)


class TestOversegment:
    def test_partition_covers_grid(self, scene):
        part = oversegment(scene.grid, SupervoxelSettings())
        assert part.n_voxels == len(scene.grid)
        assert part.sizes.sum() == len(scene.grid)
        assert part.sizes.min() >= 1

    def test_supervoxels_are_instance_pure(self, scene):
        part = oversegment(scene.grid, SupervoxelSettings())
        labels = scene.grid.instance_labels
        for members in part.members():
            assert np.unique(labels[members]).size == 1

    def test_supervoxels_smaller_than_scene(self, scene):
        part = oversegment(scene.grid, SupervoxelSettings())
        assert part.n_segments >= len(scene.ground_truth)

    def test_adjacency_size(self, scene):
        edges = build_adjacency(scene.grid, SupervoxelSettings(connectivity=6))
        assert len(edges) == scene.grid.neighbor_pairs(6).shape[0]

    def test_deterministic(self, scene):
        a = oversegment(scene.grid, SupervoxelSettings())
        b = oversegment(scene.grid, SupervoxelSettings())
        assert np.array_equal(a.assignment, b.assignment)
