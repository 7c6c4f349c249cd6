"""
Point-cloud and voxel-grid data model.

A VoxelGrid stores its cells as parallel arrays sorted lexicographically by
integer coordinate, so cell index i is stable and iteration is deterministic.
Neighbor lookups go through VoxelHash, a sorted-key hash over the coordinates.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigError, EmptyInputError, InvalidGeometryError, NoGroundTruthError

logger = logging.getLogger(__name__)

UNLABELED = -1

Coord = Tuple[int, int, int]


def _as_labels(values: Optional[np.ndarray], n: int, name: str) -> Optional[np.ndarray]:
    if values is None:
        return None
    arr = np.asarray(values, dtype=np.int64).reshape(-1)
    if arr.shape[0] != n:
        raise InvalidGeometryError(f"{name} has {arr.shape[0]} entries, expected {n}")
    return arr


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    colors: np.ndarray
    normals: Optional[np.ndarray] = None
    semantic_labels: Optional[np.ndarray] = None
    instance_labels: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = points.shape[0]
        colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if colors.shape[0] != n:
            raise InvalidGeometryError(f"colors has {colors.shape[0]} rows, expected {n}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "colors", colors)

        if self.normals is not None:
            normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if normals.shape[0] != n:
                raise InvalidGeometryError(f"normals has {normals.shape[0]} rows, expected {n}")
            if n and np.max(np.abs(np.linalg.norm(normals, axis=1) - 1.0)) > 1e-6:
                raise InvalidGeometryError("normals must have unit length")
            object.__setattr__(self, "normals", normals)

        object.__setattr__(self, "semantic_labels", _as_labels(self.semantic_labels, n, "semantic_labels"))
        object.__setattr__(self, "instance_labels", _as_labels(self.instance_labels, n, "instance_labels"))

    def __len__(self) -> int:
        return self.points.shape[0]

    def translated(self, offset: np.ndarray) -> "PointCloud":
        return PointCloud(
            points=self.points + np.asarray(offset, dtype=np.float64),
            colors=self.colors,
            normals=self.normals,
            semantic_labels=self.semantic_labels,
            instance_labels=self.instance_labels,
        )


@dataclass(frozen=True)
class VoxelCell:
    centroid: np.ndarray
    color: np.ndarray
    normal: np.ndarray
    point_count: int
    semantic_label: int
    instance_label: int


def neighbor_offsets(connectivity: int) -> np.ndarray:
    """All non-zero unit offsets for 6-, 18- or 26-connectivity."""
    if connectivity not in (6, 18, 26):
        raise ConfigError("connectivity", f"must be 6, 18 or 26, got {connectivity}")
    out = []
    for d in itertools.product((-1, 0, 1), repeat=3):
        l1 = sum(abs(c) for c in d)
        if l1 == 0:
            continue
        if connectivity == 6 and l1 > 1:
            continue
        if connectivity == 18 and l1 > 2:
            continue
        out.append(d)
    return np.asarray(out, dtype=np.int64)


def forward_offsets(connectivity: int) -> np.ndarray:
    """Lexicographically positive half of neighbor_offsets; each pair once."""
    offs = neighbor_offsets(connectivity)
    keep = [tuple(o) > (0, 0, 0) for o in offs]
    return offs[np.asarray(keep)]


class VoxelHash:
    """
    Sorted-key hash over integer voxel coordinates. Coordinates must already
    be sorted lexicographically; the packed keys are then sorted too and
    lookups are a single searchsorted per query batch.
    """

    def __init__(self, coords: np.ndarray) -> None:
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        self._n = coords.shape[0]
        if self._n == 0:
            self._lo = np.zeros(3, dtype=np.int64)
            self._ext = np.ones(3, dtype=np.int64)
            self.keys = np.zeros(0, dtype=np.int64)
            return
        # one cell of padding on each side so +-1 offsets never wrap
        self._lo = coords.min(axis=0) - 1
        self._ext = coords.max(axis=0) - self._lo + 2
        self.keys = self.pack(coords)
        if self._n > 1 and np.any(np.diff(self.keys) <= 0):
            raise InvalidGeometryError("voxel coordinates must be unique and sorted")

    def pack(self, coords: np.ndarray) -> np.ndarray:
        c = np.asarray(coords, dtype=np.int64) - self._lo
        return (c[..., 0] * self._ext[1] + c[..., 1]) * self._ext[2] + c[..., 2]

    def _offset_key(self, offset: np.ndarray) -> int:
        dx, dy, dz = (int(v) for v in offset)
        return int((dx * self._ext[1] + dy) * self._ext[2] + dz)

    def shifted(self, offset: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """For every cell, the index of the cell at `offset` (and a found mask)."""
        if self._n == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool)
        target = self.keys + self._offset_key(offset)
        pos = np.searchsorted(self.keys, target)
        pos_clipped = np.minimum(pos, self._n - 1)
        found = (pos < self._n) & (self.keys[pos_clipped] == target)
        return pos_clipped, found

    def lookup(self, coords: np.ndarray) -> np.ndarray:
        """Indices of the given coordinates, -1 where absent."""
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        if self._n == 0:
            return np.full(coords.shape[0], -1, dtype=np.int64)
        inside = np.all((coords > self._lo) & (coords < self._lo + self._ext - 1), axis=1)
        out = np.full(coords.shape[0], -1, dtype=np.int64)
        if not inside.any():
            return out
        target = self.pack(coords[inside])
        pos = np.minimum(np.searchsorted(self.keys, target), self._n - 1)
        hit = self.keys[pos] == target
        idx = np.flatnonzero(inside)
        out[idx[hit]] = pos[hit]
        return out

    def neighbor_pairs(self, connectivity: int) -> np.ndarray:
        """(E, 2) array of adjacent index pairs with i < j, each pair once."""
        chunks = []
        for off in forward_offsets(connectivity):
            pos, found = self.shifted(off)
            src = np.flatnonzero(found)
            if src.size:
                chunks.append(np.stack([src, pos[src]], axis=1))
        if not chunks:
            return np.zeros((0, 2), dtype=np.int64)
        pairs = np.concatenate(chunks, axis=0)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return pairs[order]


@dataclass(frozen=True)
class VoxelGrid:
    resolution: float
    origin: np.ndarray
    coords: np.ndarray
    centroids: np.ndarray
    colors: np.ndarray
    normals: np.ndarray
    point_counts: np.ndarray
    semantic_labels: np.ndarray
    instance_labels: np.ndarray
    has_source_normals: bool = True
    _hash: VoxelHash = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        n = np.asarray(self.coords).reshape(-1, 3).shape[0]
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=np.int64).reshape(-1, 3))
        for name in ("centroids", "colors", "normals"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1, 3)
            if arr.shape[0] != n:
                raise InvalidGeometryError(f"{name} has {arr.shape[0]} rows, expected {n}")
            object.__setattr__(self, name, arr)
        for name in ("point_counts", "semantic_labels", "instance_labels"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1)
            if arr.shape[0] != n:
                raise InvalidGeometryError(f"{name} has {arr.shape[0]} entries, expected {n}")
            object.__setattr__(self, name, arr)
        if n and self.point_counts.min() < 1:
            raise InvalidGeometryError("every cell needs at least one point")
        object.__setattr__(self, "_hash", VoxelHash(self.coords))

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def hash(self) -> VoxelHash:
        return self._hash

    def cell(self, index: int) -> VoxelCell:
        return VoxelCell(
            centroid=self.centroids[index],
            color=self.colors[index],
            normal=self.normals[index],
            point_count=int(self.point_counts[index]),
            semantic_label=int(self.semantic_labels[index]),
            instance_label=int(self.instance_labels[index]),
        )

    def cells(self) -> Iterator[Tuple[Coord, VoxelCell]]:
        for i in range(len(self)):
            x, y, z = (int(v) for v in self.coords[i])
            yield (x, y, z), self.cell(i)

    def index_of(self, coord: Coord) -> Optional[int]:
        idx = int(self._hash.lookup(np.asarray([coord]))[0])
        return None if idx < 0 else idx

    def neighbor_pairs(self, connectivity: int = 26) -> np.ndarray:
        return self._hash.neighbor_pairs(connectivity)

    def with_labels(
        self,
        semantic_labels: Optional[np.ndarray] = None,
        instance_labels: Optional[np.ndarray] = None,
    ) -> "VoxelGrid":
        return VoxelGrid(
            resolution=self.resolution,
            origin=self.origin,
            coords=self.coords,
            centroids=self.centroids,
            colors=self.colors,
            normals=self.normals,
            point_counts=self.point_counts,
            semantic_labels=self.semantic_labels if semantic_labels is None else semantic_labels,
            instance_labels=self.instance_labels if instance_labels is None else instance_labels,
            has_source_normals=self.has_source_normals,
        )


# ---------------------------------------------------------------------------
# Voxelization
# ---------------------------------------------------------------------------

def snapped_origin(points: np.ndarray, resolution: float) -> np.ndarray:
    return np.floor(points.min(axis=0) / resolution) * resolution


def majority_vote(groups: np.ndarray, labels: np.ndarray, n_groups: int) -> np.ndarray:
    """
    Per-group most frequent label, ignoring UNLABELED. Ties go to the
    smallest label id; groups with no labeled member get UNLABELED.
    """
    out = np.full(n_groups, UNLABELED, dtype=np.int64)
    mask = labels != UNLABELED
    if not mask.any():
        return out
    pairs = np.stack([groups[mask], labels[mask]], axis=1)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    order = np.lexsort((uniq[:, 1], -counts, uniq[:, 0]))
    uniq = uniq[order]
    first = np.ones(uniq.shape[0], dtype=bool)
    first[1:] = uniq[1:, 0] != uniq[:-1, 0]
    out[uniq[first, 0]] = uniq[first, 1]
    return out


def _group_mean(inverse: np.ndarray, values: np.ndarray, counts: np.ndarray) -> np.ndarray:
    n = counts.shape[0]
    cols = [np.bincount(inverse, weights=values[:, d], minlength=n) for d in range(values.shape[1])]
    return np.stack(cols, axis=1) / counts[:, None]


def _orient(normals: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Flip each normal toward +z; in-plane normals get a lexicographic sign."""
    out = normals.copy()
    sign = np.ones(out.shape[0])
    decided = np.zeros(out.shape[0], dtype=bool)
    for axis in (2, 0, 1):
        comp = out[:, axis]
        pick = ~decided & (np.abs(comp) > eps)
        sign[pick] = np.where(comp[pick] < 0, -1.0, 1.0)
        decided |= pick
    return out * sign[:, None]


def estimate_normals(coords: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """
    PCA normal per cell over the centroids of its 26-neighborhood (itself
    included): eigenvector of the smallest covariance eigenvalue.
    """
    vhash = VoxelHash(coords)
    n = centroids.shape[0]
    count = np.ones(n)
    s1 = centroids.copy()
    s2 = np.einsum("ni,nj->nij", centroids, centroids)
    for off in neighbor_offsets(26):
        pos, found = vhash.shifted(off)
        if not found.any():
            continue
        src = np.flatnonzero(found)
        nb = centroids[pos[src]]
        count[src] += 1
        s1[src] += nb
        s2[src] += np.einsum("ni,nj->nij", nb, nb)
    mean = s1 / count[:, None]
    cov = s2 / count[:, None, None] - np.einsum("ni,nj->nij", mean, mean)
    _, vecs = np.linalg.eigh(cov)
    return _orient(vecs[:, :, 0])


def voxelize(
    cloud: PointCloud,
    resolution: float,
    origin: Optional[np.ndarray] = None,
) -> VoxelGrid:
    if len(cloud) == 0:
        raise EmptyInputError("cannot voxelize an empty point cloud")
    if not resolution > 0:
        raise InvalidGeometryError(f"resolution must be positive, got {resolution}")
    points = cloud.points
    if not np.all(np.isfinite(points)):
        raise InvalidGeometryError("point cloud contains non-finite coordinates")

    origin_arr = snapped_origin(points, resolution) if origin is None else np.asarray(origin, dtype=np.float64)
    raw = np.floor((points - origin_arr) / resolution).astype(np.int64)
    coords, inverse = np.unique(raw, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    n_cells = coords.shape[0]
    counts = np.bincount(inverse, minlength=n_cells)

    centroids = _group_mean(inverse, points, counts)
    colors = np.clip(_group_mean(inverse, cloud.colors, counts), 0.0, 1.0)

    if cloud.normals is not None:
        mean_n = _group_mean(inverse, cloud.normals, counts)
        norm = np.linalg.norm(mean_n, axis=1)
        degenerate = norm < 1e-12
        mean_n[degenerate] = (0.0, 0.0, 1.0)
        norm[degenerate] = 1.0
        normals = mean_n / norm[:, None]
    else:
        normals = estimate_normals(coords, centroids)

    def labels_of(values: Optional[np.ndarray]) -> np.ndarray:
        if values is None:
            return np.full(n_cells, UNLABELED, dtype=np.int64)
        return majority_vote(inverse, values, n_cells)

    grid = VoxelGrid(
        resolution=float(resolution),
        origin=origin_arr,
        coords=coords,
        centroids=centroids,
        colors=colors,
        normals=normals,
        point_counts=counts,
        semantic_labels=labels_of(cloud.semantic_labels),
        instance_labels=labels_of(cloud.instance_labels),
        has_source_normals=cloud.normals is not None,
    )
    logger.info("Voxelized %d points into %d cells at %.3f m", len(cloud), n_cells, resolution)
    return grid


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InstanceGroundTruth:
    instance_id: int
    voxel_indices: np.ndarray
    semantic_label: int
    centroid: np.ndarray

    @property
    def size(self) -> int:
        return int(self.voxel_indices.shape[0])


def extract_ground_truth(grid: VoxelGrid) -> List[InstanceGroundTruth]:
    labels = grid.instance_labels
    labeled = labels != UNLABELED
    if not labeled.any():
        raise NoGroundTruthError("grid has no cell with an instance label")

    ids = np.unique(labels[labeled])
    # stable sort keeps voxel indices ascending inside each instance
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    starts = np.searchsorted(sorted_labels, ids, side="left")
    ends = np.searchsorted(sorted_labels, ids, side="right")

    instances: List[InstanceGroundTruth] = []
    for inst_id, lo, hi in zip(ids, starts, ends):
        members = order[lo:hi]
        semantic = majority_vote(np.zeros(members.shape[0], dtype=np.int64), grid.semantic_labels[members], 1)[0]
        instances.append(
            InstanceGroundTruth(
                instance_id=int(inst_id),
                voxel_indices=members,
                semantic_label=int(semantic),
                centroid=grid.centroids[members].mean(axis=0),
            )
        )
    logger.info("Extracted %d ground-truth instances", len(instances))
    return instances


def instance_index(gt: List[InstanceGroundTruth], n_voxels: int) -> np.ndarray:
    """Per voxel, the position of its instance in `gt` (-1 when uncovered)."""
    out = np.full(n_voxels, -1, dtype=np.int64)
    for pos, inst in enumerate(gt):
        out[inst.voxel_indices] = pos
    return out


def instance_sizes(gt: Sequence[InstanceGroundTruth]) -> np.ndarray:
    """N_c of every instance, in `gt` order."""
    return np.asarray([inst.size for inst in gt], dtype=np.int64)
