"""
Supervoxel over-segmentation: graph-based segmentation on the voxel
adjacency graph with a color + normal dissimilarity.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Iterator, List, NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from core.config import SupervoxelSettings
from core.errors import ConfigError, EmptyInputError, InvalidGeometryError
from core.geometry import VoxelGrid

logger = logging.getLogger(__name__)


class AdjacencyEdge(NamedTuple):
    p: int
    q: int
    dissimilarity: float


@dataclass(frozen=True)
class EdgeList:
    """Edges as parallel arrays; pairs[:, 0] < pairs[:, 1]."""

    pairs: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if pairs.shape[0] != weights.shape[0]:
            raise InvalidGeometryError("edge pairs and weights differ in length")
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise InvalidGeometryError("self-edge in adjacency")
        if weights.size and (not np.all(np.isfinite(weights)) or weights.min() < 0):
            raise InvalidGeometryError("edge dissimilarities must be finite and non-negative")
        # canonical orientation
        pairs = np.sort(pairs, axis=1)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.weights.shape[0]

    def __iter__(self) -> Iterator[AdjacencyEdge]:
        for (p, q), w in zip(self.pairs.tolist(), self.weights.tolist()):
            yield AdjacencyEdge(p, q, w)

    @classmethod
    def from_edges(cls, edges: Iterable[AdjacencyEdge]) -> "EdgeList":
        items = list(edges)
        if not items:
            return cls(np.zeros((0, 2), dtype=np.int64), np.zeros(0))
        return cls(
            pairs=np.asarray([(e.p, e.q) for e in items], dtype=np.int64),
            weights=np.asarray([e.dissimilarity for e in items], dtype=np.float64),
        )


@dataclass(frozen=True)
class SuperVoxelPartition:
    assignment: np.ndarray
    sizes: np.ndarray

    @property
    def n_segments(self) -> int:
        return int(self.sizes.shape[0])

    @property
    def n_voxels(self) -> int:
        return int(self.assignment.shape[0])

    def members(self) -> List[np.ndarray]:
        """Voxel indices of every segment, ascending inside each segment."""
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.cumsum(self.sizes)[:-1]
        return np.split(order, bounds)


def dissimilarity(
    colors: np.ndarray,
    normals: np.ndarray,
    centroids: np.ndarray,
    pairs: np.ndarray,
    alpha: float,
    beta: float,
    gamma_concave: float,
) -> np.ndarray:
    p, q = pairs[:, 0], pairs[:, 1]
    color_term = np.linalg.norm(colors[p] - colors[q], axis=1)
    cos = np.einsum("ij,ij->i", normals[p], normals[q])
    normal_term = np.clip(1.0 - cos, 0.0, None)
    # concave when the centroid offset opposes the normal difference
    concave = np.einsum("ij,ij->i", centroids[p] - centroids[q], normals[p] - normals[q]) < 0
    factor = np.where(concave, 1.0 / gamma_concave, 1.0)
    return alpha * color_term + beta * normal_term * factor


def build_adjacency(grid: VoxelGrid, settings: SupervoxelSettings) -> EdgeList:
    if len(grid) == 0:
        raise EmptyInputError("cannot build adjacency of an empty grid")
    pairs = grid.neighbor_pairs(settings.connectivity)
    weights = dissimilarity(
        grid.colors, grid.normals, grid.centroids, pairs,
        settings.alpha, settings.beta, settings.gamma_concave,
    )
    logger.debug("Built %d adjacency edges over %d cells", len(weights), len(grid))
    return EdgeList(pairs, weights)


class DisjointSet:
    """Union-find with union by size and path halving, plus per-root internal difference."""

    def __init__(self, n: int) -> None:
        self.parent = list(range(n))
        self.size = [1] * n
        self.internal = [0.0] * n

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> int:
        """Join two roots; returns the surviving root."""
        if self.size[a] < self.size[b] or (self.size[a] == self.size[b] and b < a):
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        return a

    def roots(self) -> np.ndarray:
        return np.asarray([self.find(i) for i in range(len(self.parent))], dtype=np.int64)


def _sorted_order(edges: EdgeList) -> np.ndarray:
    return np.lexsort((edges.pairs[:, 1], edges.pairs[:, 0], edges.weights))


def _presegment_zero_edges(ds: DisjointSet, edges: EdgeList, n_voxels: int) -> np.ndarray:
    """
    Join all zero-weight edges at once. Zero edges come first in weight order
    and always pass the merge test (internal difference stays 0), so this is
    the same as feeding them through the loop one by one.
    """
    zero = edges.weights == 0.0
    if not zero.any():
        return np.arange(n_voxels, dtype=np.int64)
    p, q = edges.pairs[zero, 0], edges.pairs[zero, 1]
    graph = coo_matrix((np.ones(p.shape[0]), (p, q)), shape=(n_voxels, n_voxels))
    _, labels = connected_components(graph, directed=False)

    # point every member at the smallest index of its component
    first = np.full(labels.max() + 1, n_voxels, dtype=np.int64)
    np.minimum.at(first, labels, np.arange(n_voxels))
    root = first[labels]
    counts = np.bincount(root, minlength=n_voxels)
    ds.parent = root.tolist()
    ds.size = counts.tolist()
    return root


def segment(edges: EdgeList, n_voxels: int, k: float, min_size: int) -> SuperVoxelPartition:
    if n_voxels <= 0:
        raise EmptyInputError("cannot segment zero voxels")
    if not k > 0:
        raise ConfigError("supervoxel.k", f"must be positive, got {k}")
    if min_size < 1:
        raise ConfigError("supervoxel.min_size", f"must be at least 1, got {min_size}")
    if len(edges) and edges.pairs.max() >= n_voxels:
        raise InvalidGeometryError("edge endpoint outside the voxel range")

    ds = DisjointSet(n_voxels)
    labels = _presegment_zero_edges(ds, edges, n_voxels)

    order = _sorted_order(edges)
    p_all = edges.pairs[order, 0]
    q_all = edges.pairs[order, 1]
    w_all = edges.weights[order]
    live = (w_all > 0.0) & (labels[p_all] != labels[q_all])
    ps, qs, ws = p_all[live].tolist(), q_all[live].tolist(), w_all[live].tolist()

    find, size, internal = ds.find, ds.size, ds.internal
    for p, q, w in zip(ps, qs, ws):
        a, b = find(p), find(q)
        if a == b:
            continue
        if w <= min(internal[a] + k / size[a], internal[b] + k / size[b]):
            root = ds.union(a, b)
            internal[root] = w

    # small components join their cheapest neighbor, in weight order
    for p, q in zip(ps, qs):
        a, b = find(p), find(q)
        if a != b and (size[a] < min_size or size[b] < min_size):
            ds.union(a, b)

    roots = ds.roots()
    uniq, first_index, inverse = np.unique(roots, return_index=True, return_inverse=True)
    rank = np.empty(uniq.shape[0], dtype=np.int64)
    rank[np.argsort(first_index, kind="stable")] = np.arange(uniq.shape[0])
    assignment = rank[inverse.reshape(-1)]
    sizes = np.bincount(assignment, minlength=uniq.shape[0])

    logger.info("Segmented %d voxels into %d supervoxels", n_voxels, sizes.shape[0])
    return SuperVoxelPartition(assignment=assignment, sizes=sizes)


def oversegment(grid: VoxelGrid, settings: SupervoxelSettings) -> SuperVoxelPartition:
    """build_adjacency followed by segment with the configured parameters."""
    edges = build_adjacency(grid, settings)
    return segment(edges, len(grid), settings.k, settings.min_size)
