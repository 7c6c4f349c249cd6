"""
Occupancy-aware agglomerative clustering of supervoxels.

Supervoxel statistics are aggregated from per-voxel predictions, adjacent
supervoxels are linked in a weighted graph, and the heaviest edge above the
threshold is merged until none is left. Surviving vertices become instances
when their occupancy ratio is plausible.

The occupancy ratio is r = |members| / O, with O the predicted instance
size: r is about 1 for a complete instance, below 1 for a fragment and
above 1 for a group spanning several instances.
"""

import heapq
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from core.config import ClusterSettings
from core.errors import AlignmentError, ConfigError, EmptyInputError
from core.geometry import VoxelGrid
from core.losses import Membership
from core.oracle import PredictionSet
from core.supervoxel import SuperVoxelPartition

logger = logging.getLogger(__name__)

REJECTED = -1
# weight denominator floor
_MIN_RATIO = 0.5


@dataclass(frozen=True)
class SuperVoxelStats:
    segments: Tuple[int, ...]
    size: int
    feature: np.ndarray
    spatial: np.ndarray
    occupancy: float
    sigma_s: float
    sigma_d: float
    histogram: np.ndarray

    @property
    def ratio(self) -> float:
        return self.size / self.occupancy

    @property
    def semantic_label(self) -> int:
        return int(np.argmax(self.histogram))

    def merged_with(self, other: "SuperVoxelStats") -> "SuperVoxelStats":
        """Size-weighted means of both vertices; member sets are joined."""
        n = self.size + other.size
        wa, wb = self.size / n, other.size / n
        return SuperVoxelStats(
            segments=tuple(sorted(self.segments + other.segments)),
            size=n,
            feature=wa * self.feature + wb * other.feature,
            spatial=wa * self.spatial + wb * other.spatial,
            occupancy=wa * self.occupancy + wb * other.occupancy,
            sigma_s=wa * self.sigma_s + wb * other.sigma_s,
            sigma_d=wa * self.sigma_d + wb * other.sigma_d,
            histogram=self.histogram + other.histogram,
        )


def aggregate(
    partition: SuperVoxelPartition,
    preds: PredictionSet,
    grid: VoxelGrid,
) -> List[SuperVoxelStats]:
    n = len(grid)
    if len(preds) != n:
        raise AlignmentError(f"{len(preds)} predictions for {n} cells")
    if partition.n_voxels != n:
        raise AlignmentError(f"partition covers {partition.n_voxels} voxels, grid has {n}")
    if n == 0:
        raise EmptyInputError("nothing to aggregate")

    groups = Membership(owner=partition.assignment, sizes=partition.sizes)
    feature = groups.mean(preds.feature)
    spatial = groups.mean(grid.centroids + preds.offset)
    sigma = groups.mean(preds.sigma)
    occupancy = np.exp(groups.mean(preds.occupancy))

    votes = np.argmax(preds.logits, axis=1)
    n_classes = preds.n_classes
    hist = np.bincount(partition.assignment * n_classes + votes,
                       minlength=partition.n_segments * n_classes).reshape(-1, n_classes)

    stats = [
        SuperVoxelStats(
            segments=(i,),
            size=int(partition.sizes[i]),
            feature=feature[i],
            spatial=spatial[i],
            occupancy=float(occupancy[i]),
            sigma_s=float(sigma[i, 0]),
            sigma_d=float(sigma[i, 1]),
            histogram=hist[i].astype(np.float64),
        )
        for i in range(partition.n_segments)
    ]
    logger.debug("Aggregated %d supervoxels", len(stats))
    return stats


def segment_adjacency(partition: SuperVoxelPartition, voxel_pairs: np.ndarray) -> np.ndarray:
    """Supervoxel pairs (a < b) with at least one adjacent member voxel pair."""
    a = partition.assignment[voxel_pairs[:, 0]]
    b = partition.assignment[voxel_pairs[:, 1]]
    keep = a != b
    pairs = np.stack([np.minimum(a[keep], b[keep]), np.maximum(a[keep], b[keep])], axis=1)
    if pairs.shape[0] == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(pairs, axis=0)


def edge_weight(a: SuperVoxelStats, b: SuperVoxelStats, settings: ClusterSettings) -> float:
    """
    exp(-(|S_a - S_b| / sigma_s)^2 - (|D_a - D_b| / sigma_d)^2) / max(r, 0.5)
    with sigma_s, sigma_d and r taken from the vertex that merges both.
    """
    virtual = a.merged_with(b)
    exponent = 0.0
    if settings.use_feature:
        exponent -= (float(np.linalg.norm(a.feature - b.feature)) / virtual.sigma_s) ** 2
    if settings.use_spatial:
        exponent -= (float(np.linalg.norm(a.spatial - b.spatial)) / virtual.sigma_d) ** 2
    ratio = virtual.ratio if settings.use_occupancy else 1.0
    return float(np.exp(exponent)) / max(ratio, _MIN_RATIO)


@dataclass(frozen=True)
class MergeRecord:
    a: int
    b: int
    weight: float
    result: int


@dataclass
class ClusterGraph:
    """
    Undirected supervoxel graph. Vertex ids are never reused: a merge retires
    both endpoints and creates a fresh id, so an edge between two live ids
    always carries its current weight.
    """

    settings: ClusterSettings
    vertices: Dict[int, SuperVoxelStats] = field(default_factory=dict)
    adjacency: Dict[int, Set[int]] = field(default_factory=dict)
    merge_log: List[MergeRecord] = field(default_factory=list)
    next_id: int = 0

    def __len__(self) -> int:
        return len(self.vertices)

    def admissible(self, a: int, b: int) -> bool:
        if not self.settings.semantic_gating:
            return True
        return self.vertices[a].semantic_label == self.vertices[b].semantic_label

    def weight(self, a: int, b: int) -> float:
        return edge_weight(self.vertices[a], self.vertices[b], self.settings)

    def edges(self) -> List[Tuple[int, int, float]]:
        """Admissible edges (a < b) with their weights, sorted by endpoints."""
        out = []
        for a in sorted(self.adjacency):
            for b in sorted(self.adjacency[a]):
                if a < b and self.admissible(a, b):
                    out.append((a, b, self.weight(a, b)))
        return out

    def merge(self, a: int, b: int, weight: float) -> int:
        new = self.next_id
        self.next_id += 1
        self.vertices[new] = self.vertices.pop(a).merged_with(self.vertices.pop(b))
        neighbors = (self.adjacency.pop(a) | self.adjacency.pop(b)) - {a, b}
        for nb in neighbors:
            self.adjacency[nb].discard(a)
            self.adjacency[nb].discard(b)
            self.adjacency[nb].add(new)
        self.adjacency[new] = neighbors
        self.merge_log.append(MergeRecord(a=a, b=b, weight=weight, result=new))
        return new


def build_cluster_graph(
    stats: List[SuperVoxelStats],
    segment_pairs: np.ndarray,
    settings: ClusterSettings,
) -> ClusterGraph:
    graph = ClusterGraph(settings=settings, next_id=len(stats))
    for i, s in enumerate(stats):
        graph.vertices[i] = s
        graph.adjacency[i] = set()
    for a, b in np.asarray(segment_pairs, dtype=np.int64).reshape(-1, 2).tolist():
        if a == b:
            continue
        graph.adjacency[a].add(b)
        graph.adjacency[b].add(a)
    logger.debug("Cluster graph: %d vertices, %d edges", len(stats), len(segment_pairs))
    return graph


def merge_loop(graph: ClusterGraph, t0: float) -> ClusterGraph:
    """
    Repeatedly merge the heaviest admissible edge with weight > t0.
    Ties go to the smallest (a, b) id pair. Heap entries whose endpoints have
    been retired are skipped when popped.
    """
    if not 0.0 < t0 < 2.0:
        raise ConfigError("cluster.t0", f"must lie in (0, 2), got {t0}")

    heap: List[Tuple[float, int, int]] = []
    for a, b, w in graph.edges():
        if w > t0:
            heap.append((-w, a, b))
    heapq.heapify(heap)

    while heap:
        neg_w, a, b = heapq.heappop(heap)
        if a not in graph.vertices or b not in graph.vertices:
            continue
        new = graph.merge(a, b, -neg_w)
        for nb in sorted(graph.adjacency[new]):
            if not graph.admissible(new, nb):
                continue
            w = graph.weight(new, nb)
            if w > t0:
                lo, hi = (nb, new) if nb < new else (new, nb)
                heapq.heappush(heap, (-w, lo, hi))

    logger.info("Merge loop: %d merges, %d vertices remain", len(graph.merge_log), len(graph))
    return graph


@dataclass(frozen=True)
class PredictedInstance:
    instance_id: int
    semantic_label: int
    confidence: float
    voxel_count: int
    ratio: float


@dataclass(frozen=True)
class InstancePrediction:
    voxel_instance: np.ndarray
    instances: List[PredictedInstance]

    def voxel_sets(self) -> Dict[int, np.ndarray]:
        order = np.argsort(self.voxel_instance, kind="stable")
        labels = self.voxel_instance[order]
        out = {}
        for inst in self.instances:
            lo = np.searchsorted(labels, inst.instance_id, side="left")
            hi = np.searchsorted(labels, inst.instance_id, side="right")
            out[inst.instance_id] = order[lo:hi]
        return out


def confidence_score(stats: SuperVoxelStats, use_occupancy: bool = True) -> float:
    """Winning-class vote fraction times the ratio fit min(r, 1/r), in (0, 1]."""
    votes = float(stats.histogram.max()) / stats.size
    fit = min(stats.ratio, 1.0 / stats.ratio) if use_occupancy else 1.0
    return float(np.clip(votes * fit, np.finfo(float).tiny, 1.0))


def finalize(
    graph: ClusterGraph,
    partition: SuperVoxelPartition,
    settings: ClusterSettings,
) -> InstancePrediction:
    lo, hi = settings.ratio_bounds
    seg_members = partition.members()

    accepted: List[Tuple[int, SuperVoxelStats, np.ndarray]] = []
    for vid in sorted(graph.vertices):
        stats = graph.vertices[vid]
        members = np.sort(np.concatenate([seg_members[s] for s in stats.segments]))
        if stats.size < settings.min_voxels:
            logger.debug("Rejected vertex %d: %d voxels below minimum", vid, stats.size)
            continue
        if settings.use_occupancy and not lo < stats.ratio < hi:
            logger.debug("Rejected vertex %d: occupancy ratio %.3f", vid, stats.ratio)
            continue
        accepted.append((int(members[0]), stats, members))

    accepted.sort(key=lambda item: item[0])
    voxel_instance = np.full(partition.n_voxels, REJECTED, dtype=np.int64)
    instances = []
    for new_id, (_, stats, members) in enumerate(accepted):
        voxel_instance[members] = new_id
        instances.append(
            PredictedInstance(
                instance_id=new_id,
                semantic_label=stats.semantic_label,
                confidence=confidence_score(stats, settings.use_occupancy),
                voxel_count=stats.size,
                ratio=stats.ratio,
            )
        )
    logger.info("Finalized %d instances from %d vertices", len(instances), len(graph))
    return InstancePrediction(voxel_instance=voxel_instance, instances=instances)


@dataclass(frozen=True)
class ClusterResult:
    graph: ClusterGraph
    prediction: InstancePrediction


def cluster_scene(
    grid: VoxelGrid,
    preds: PredictionSet,
    partition: SuperVoxelPartition,
    settings: ClusterSettings,
    voxel_pairs: Optional[np.ndarray] = None,
) -> ClusterResult:
    """aggregate, build_cluster_graph, merge_loop and finalize in one call."""
    stats = aggregate(partition, preds, grid)
    pairs = grid.neighbor_pairs(26) if voxel_pairs is None else voxel_pairs
    graph = build_cluster_graph(stats, segment_adjacency(partition, pairs), settings)
    merge_loop(graph, settings.t0)
    return ClusterResult(graph=graph, prediction=finalize(graph, partition, settings))
