"""
Synthetic indoor scenes with planted instances.

Everything is built on the voxel lattice: every instance is a set of
integer cells, no cell belongs to two instances, and each cell receives
`points_per_voxel` points strictly inside its cube. Voxelizing the cloud at
the scene resolution therefore reproduces the planted labels exactly.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.config import SceneSettings
from core.errors import EmptyInputError, PackingFailedError
from core.geometry import InstanceGroundTruth, PointCloud, VoxelGrid, extract_ground_truth, voxelize

logger = logging.getLogger(__name__)

CLASS_NAMES = (
    "wall", "floor", "cabinet", "bed", "chair", "sofa", "table", "door",
    "window", "bookshelf", "picture", "counter", "desk", "curtain",
    "refrigerator", "shower curtain", "toilet", "sink", "bathtub", "otherfurniture",
)

WALL, FLOOR = 0, 1

_SHAPE_CLASSES: Dict[str, Tuple[int, ...]] = {
    "box": (2, 3, 5, 6, 9, 11, 12, 14, 19),
    "cylinder": (4, 16, 17, 18, 19),
    "panel": (7, 8, 10, 13, 15),
}

_FLOOR_RGB = (150, 120, 90)
_WALL_RGB = ((205, 200, 190), (190, 195, 205), (200, 205, 190), (195, 190, 200))

# sub-cell sampling range keeps points away from cube faces
_JITTER_LO, _JITTER_HI = 0.15, 0.85


@dataclass(frozen=True)
class PlantedInstance:
    instance_id: int
    shape: str
    semantic_label: int
    n_cells: int
    color: Tuple[int, int, int]
    footprint: Tuple[int, int, int, int]


@dataclass(frozen=True)
class SyntheticScene:
    cloud: PointCloud
    grid: VoxelGrid
    ground_truth: List[InstanceGroundTruth]
    planted: List[PlantedInstance]
    confusable_pairs: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def n_instances(self) -> int:
        return len(self.planted)


@dataclass
class _Part:
    """Cells of one instance before sampling, with a per-cell normal."""

    shape: str
    semantic_label: int
    color: Tuple[int, int, int]
    cells: np.ndarray
    normals: np.ndarray
    footprint: Tuple[int, int, int, int] = (0, 0, 0, 0)


def class_pool(shape: str, n_classes: int) -> Tuple[int, ...]:
    pool = tuple(c for c in _SHAPE_CLASSES[shape] if c < n_classes)
    return pool or (n_classes - 1,)


def _clip_class(label: int, n_classes: int) -> int:
    return min(label, n_classes - 1)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Room
# ---------------------------------------------------------------------------

def _room_parts(nx: int, ny: int, nz: int, n_classes: int) -> List[_Part]:
    ii, jj = np.meshgrid(np.arange(1, nx - 1), np.arange(1, ny - 1), indexing="ij")
    floor = np.stack([ii.ravel(), jj.ravel(), np.zeros(ii.size, dtype=np.int64)], axis=1)
    parts = [_Part("floor", _clip_class(FLOOR, n_classes), _FLOOR_RGB, floor,
                   np.tile([0.0, 0.0, 1.0], (floor.shape[0], 1)), (1, 1, nx - 2, ny - 2))]

    zz = np.arange(nz)
    # west/east span the full y range, south/north fill the gap between them
    walls = [
        ("x", 0, np.arange(ny), (1.0, 0.0, 0.0)),
        ("x", nx - 1, np.arange(ny), (-1.0, 0.0, 0.0)),
        ("y", 0, np.arange(1, nx - 1), (0.0, 1.0, 0.0)),
        ("y", ny - 1, np.arange(1, nx - 1), (0.0, -1.0, 0.0)),
    ]
    for idx, (axis, fixed, span, normal) in enumerate(walls):
        a, z = np.meshgrid(span, zz, indexing="ij")
        a, z = a.ravel(), z.ravel()
        f = np.full(a.shape[0], fixed)
        cells = np.stack([f, a, z] if axis == "x" else [a, f, z], axis=1)
        parts.append(_Part("wall", _clip_class(WALL, n_classes), _WALL_RGB[idx], cells,
                           np.tile(normal, (cells.shape[0], 1)), (0, 0, 0, 0)))
    return parts


# ---------------------------------------------------------------------------
# Objects
# ---------------------------------------------------------------------------

def _box_cells(x0: int, y0: int, w: int, d: int, h: int) -> Tuple[np.ndarray, np.ndarray]:
    """Side shell and lid of a box standing on the floor (z starts at 1)."""
    i, j, k = np.meshgrid(np.arange(w), np.arange(d), np.arange(1, h + 1), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    side = (i == 0) | (i == w - 1) | (j == 0) | (j == d - 1)
    top = k == h
    keep = side | top
    i, j, k = i[keep], j[keep], k[keep]

    normals = np.zeros((i.shape[0], 3))
    normals[:, 0] = (i == w - 1).astype(float) - (i == 0).astype(float)
    normals[:, 1] = (j == d - 1).astype(float) - (j == 0).astype(float)
    normals[:, 2] = (k == h).astype(float)
    # a one-cell-wide box has opposite faces in the same cell
    flat = np.linalg.norm(normals, axis=1) < 1e-12
    normals[flat] = (0.0, 0.0, 1.0)
    cells = np.stack([i + x0, j + y0, k], axis=1)
    return cells, _unit(normals)


def _cylinder_cells(x0: int, y0: int, diameter: int, h: int) -> Tuple[np.ndarray, np.ndarray]:
    r = diameter / 2.0
    i, j = np.meshgrid(np.arange(diameter), np.arange(diameter), indexing="ij")
    dx, dy = i + 0.5 - r, j + 0.5 - r
    disk = dx ** 2 + dy ** 2 <= r ** 2

    padded = np.pad(disk, 1)
    interior = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    ring = disk & ~interior

    cells, normals = [], []
    ri, rj = np.nonzero(ring)
    radial = _unit(np.stack([dx[ri, rj], dy[ri, rj], np.zeros(ri.shape[0])], axis=1))
    for z in range(1, h):
        cells.append(np.stack([ri, rj, np.full(ri.shape[0], z)], axis=1))
        normals.append(radial)
    di, dj = np.nonzero(disk)
    top = np.zeros((di.shape[0], 3))
    top[:, 2] = 1.0
    rim = ring[di, dj]
    rim_dir = _unit(np.stack([dx[di[rim], dj[rim]], dy[di[rim], dj[rim]], np.zeros(int(rim.sum()))], axis=1))
    top[rim, :2] = rim_dir[:, :2]
    cells.append(np.stack([di, dj, np.full(di.shape[0], h)], axis=1))
    normals.append(top)

    out = np.concatenate(cells, axis=0) + np.asarray([x0, y0, 0])
    return out, _unit(np.concatenate(normals, axis=0))


def _panel_cells(x0: int, y0: int, length: int, along_x: bool, h: int, facing: float) -> Tuple[np.ndarray, np.ndarray]:
    a, k = np.meshgrid(np.arange(length), np.arange(1, h + 1), indexing="ij")
    a, k = a.ravel(), k.ravel()
    zeros = np.zeros(a.shape[0], dtype=np.int64)
    if along_x:
        cells = np.stack([a + x0, zeros + y0, k], axis=1)
        normal = (0.0, facing, 0.0)
    else:
        cells = np.stack([zeros + x0, a + y0, k], axis=1)
        normal = (facing, 0.0, 0.0)
    return cells, np.tile(normal, (cells.shape[0], 1))


def _n_cells(rng: np.random.Generator, bounds: Tuple[float, float], resolution: float) -> int:
    lo, hi = bounds
    return max(2, int(round(rng.uniform(lo, hi) / resolution)))


class _Packer:
    """Places rectangular footprints on the floor with a clearance margin."""

    def __init__(self, nx: int, ny: int, gap: int) -> None:
        self.gap = gap
        self.lo = 1 + gap
        self.hi_x = nx - 2 - gap
        self.hi_y = ny - 2 - gap
        self.taken = np.zeros((nx, ny), dtype=bool)

    def fits(self, x0: int, y0: int, w: int, d: int) -> bool:
        if x0 < self.lo or y0 < self.lo or x0 + w - 1 > self.hi_x or y0 + d - 1 > self.hi_y:
            return False
        g = self.gap
        window = self.taken[max(x0 - g, 0): x0 + w + g, max(y0 - g, 0): y0 + d + g]
        return not window.any()

    def place(self, rng: np.random.Generator, w: int, d: int) -> Optional[Tuple[int, int]]:
        span_x = self.hi_x - w + 2 - self.lo
        span_y = self.hi_y - d + 2 - self.lo
        if span_x <= 0 or span_y <= 0:
            return None
        x0 = self.lo + int(rng.integers(0, span_x))
        y0 = self.lo + int(rng.integers(0, span_y))
        if not self.fits(x0, y0, w, d):
            return None
        self.taken[x0: x0 + w, y0: y0 + d] = True
        return x0, y0


def _object_color(rng: np.random.Generator, used: set) -> Tuple[int, int, int]:
    while True:
        color = tuple(int(v) for v in rng.integers(30, 226, size=3))
        if color not in used:
            used.add(color)
            return color  # type: ignore[return-value]


def _random_object(
    rng: np.random.Generator,
    settings: SceneSettings,
    packer: _Packer,
    resolution: float,
    n_classes: int,
    used_colors: set,
) -> _Part:
    for _ in range(settings.max_attempts):
        shape = settings.shapes[int(rng.integers(0, len(settings.shapes)))]
        h = _n_cells(rng, settings.object_height, resolution)
        if shape == "box":
            w = _n_cells(rng, settings.object_size, resolution)
            d = _n_cells(rng, settings.object_size, resolution)
        elif shape == "cylinder":
            w = d = max(4, _n_cells(rng, settings.object_size, resolution))
        else:
            length = _n_cells(rng, settings.object_size, resolution)
            along_x = bool(rng.integers(0, 2))
            w, d = (length, 1) if along_x else (1, length)

        spot = packer.place(rng, w, d)
        if spot is None:
            continue
        x0, y0 = spot
        if shape == "box":
            cells, normals = _box_cells(x0, y0, w, d, h)
        elif shape == "cylinder":
            cells, normals = _cylinder_cells(x0, y0, w, h)
        else:
            facing = 1.0 if rng.integers(0, 2) else -1.0
            cells, normals = _panel_cells(x0, y0, max(w, d), w > d, h, facing)
        pool = class_pool(shape, n_classes)
        label = pool[int(rng.integers(0, len(pool)))]
        return _Part(shape, label, _object_color(rng, used_colors), cells, normals, (x0, y0, w, d))
    raise PackingFailedError(f"could not place an object after {settings.max_attempts} attempts")


def _adjacent_pair(
    rng: np.random.Generator,
    settings: SceneSettings,
    packer: _Packer,
    resolution: float,
    n_classes: int,
    used_colors: set,
) -> List[_Part]:
    """Two touching same-class boxes of different widths."""
    for _ in range(settings.max_attempts):
        wa = _n_cells(rng, settings.object_size, resolution)
        wb = _n_cells(rng, settings.object_size, resolution)
        if wa == wb:
            wb += max(2, wa // 2)
        d = _n_cells(rng, settings.object_size, resolution)
        h = _n_cells(rng, settings.object_height, resolution)
        spot = packer.place(rng, wa + wb, d)
        if spot is None:
            continue
        x0, y0 = spot
        pool = class_pool("box", n_classes)
        label = pool[int(rng.integers(0, len(pool)))]
        cells_a, normals_a = _box_cells(x0, y0, wa, d, h)
        cells_b, normals_b = _box_cells(x0 + wa, y0, wb, d, h)
        return [
            _Part("box", label, _object_color(rng, used_colors), cells_a, normals_a, (x0, y0, wa, d)),
            _Part("box", label, _object_color(rng, used_colors), cells_b, normals_b, (x0 + wa, y0, wb, d)),
        ]
    raise PackingFailedError(f"could not place the adjacent pair after {settings.max_attempts} attempts")


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _sample_points(
    rng: np.random.Generator,
    parts: Sequence[_Part],
    resolution: float,
    points_per_voxel: int,
    color_jitter: float,
) -> PointCloud:
    cells = np.concatenate([p.cells for p in parts], axis=0)
    normals = np.concatenate([p.normals for p in parts], axis=0)
    instance = np.concatenate([np.full(p.cells.shape[0], i) for i, p in enumerate(parts)])
    semantic = np.concatenate([np.full(p.cells.shape[0], p.semantic_label) for p in parts])
    colors = np.concatenate([np.tile(np.asarray(p.color, dtype=np.float64) / 255.0, (p.cells.shape[0], 1))
                             for p in parts])

    rep = points_per_voxel
    offsets = rng.uniform(_JITTER_LO, _JITTER_HI, size=(cells.shape[0] * rep, 3))
    points = (np.repeat(cells, rep, axis=0) + offsets) * resolution
    point_colors = np.repeat(colors, rep, axis=0)
    if color_jitter > 0:
        point_colors = np.clip(point_colors + rng.normal(0.0, color_jitter, size=point_colors.shape), 0.0, 1.0)

    return PointCloud(
        points=points,
        colors=point_colors,
        normals=np.repeat(normals, rep, axis=0),
        semantic_labels=np.repeat(semantic, rep),
        instance_labels=np.repeat(instance, rep),
    )


def synth_scene(
    settings: SceneSettings,
    resolution: float,
    n_classes: int,
    seed: int,
) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    nx = max(4, int(round(settings.room_size[0] / resolution)))
    ny = max(4, int(round(settings.room_size[1] / resolution)))
    nz = max(2, int(round(settings.wall_height / resolution)))
    gap = int(np.ceil(settings.min_gap / resolution - 1e-9))

    parts: List[_Part] = _room_parts(nx, ny, nz, n_classes) if settings.include_room else []
    packer = _Packer(nx, ny, gap)
    used_colors: set = set()

    confusable: List[Tuple[int, int]] = []
    n_objects = settings.n_objects
    if settings.layout == "adjacent_pair":
        first = len(parts)
        parts.extend(_adjacent_pair(rng, settings, packer, resolution, n_classes, used_colors))
        confusable.append((first, first + 1))
        n_objects = max(0, n_objects - 2)
    for _ in range(n_objects):
        parts.append(_random_object(rng, settings, packer, resolution, n_classes, used_colors))

    if not parts:
        raise EmptyInputError("scene has no instances: enable the room or request objects")

    cloud = _sample_points(rng, parts, resolution, settings.points_per_voxel, settings.color_jitter)
    grid = voxelize(cloud, resolution)
    gt = extract_ground_truth(grid)

    planted = [
        PlantedInstance(
            instance_id=i,
            shape=p.shape,
            semantic_label=p.semantic_label,
            n_cells=int(p.cells.shape[0]),
            color=p.color,
            footprint=p.footprint,
        )
        for i, p in enumerate(parts)
    ]
    logger.info(
        "Synthesized scene seed=%d: %d instances, %d points, %d cells",
        seed, len(planted), len(cloud), len(grid),
    )
    return SyntheticScene(cloud=cloud, grid=grid, ground_truth=gt, planted=planted, confusable_pairs=confusable)
