"""
PLY reading and writing for point clouds and voxel grids (plyfile).

Cloud schema: x, y, z, red, green, blue, optional nx, ny, nz, optional
integer `label` (semantic) and `instance`.

Grid schema adds the integer cell coordinate (vx, vy, vz), the member point
`count` and an optional `segment`; the resolution and origin travel as
header comments so a grid reads back without re-voxelizing.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from plyfile import PlyData, PlyElement, PlyElementParseError, PlyHeaderParseError

from core.errors import ParseError
from core.geometry import UNLABELED, PointCloud, VoxelGrid

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_XYZ = ("x", "y", "z")
_RGB = ("red", "green", "blue")
_NORMAL = ("nx", "ny", "nz")
_CELL = ("vx", "vy", "vz")


def _load(path: PathLike) -> PlyData:
    p = Path(path)
    if not p.is_file():
        raise ParseError(str(p), "file not found")
    try:
        return PlyData.read(str(p))
    except PlyHeaderParseError as exc:
        raise ParseError(str(p), str(exc.message), line=exc.line) from exc
    except PlyElementParseError as exc:
        # element rows follow the header; report the row as the line
        raise ParseError(str(p), f"{exc.message} in element '{exc.element.name}'", line=exc.row) from exc
    except (ValueError, IndexError, EOFError) as exc:
        raise ParseError(str(p), f"unreadable PLY: {exc}") from exc


def _vertex(ply: PlyData, path: PathLike) -> np.ndarray:
    try:
        data = ply["vertex"].data
    except KeyError as exc:
        raise ParseError(str(path), "no 'vertex' element") from exc
    return data


def _require(data: np.ndarray, names: Sequence[str], path: PathLike) -> None:
    fields = data.dtype.names or ()
    missing = [n for n in names if n not in fields]
    if missing:
        raise ParseError(str(path), f"missing vertex properties: {', '.join(missing)}")


def _stack(data: np.ndarray, names: Sequence[str], dtype=np.float64) -> np.ndarray:
    return np.stack([np.asarray(data[n], dtype=dtype) for n in names], axis=1)


def _colors(data: np.ndarray) -> np.ndarray:
    raw = _stack(data, _RGB)
    if np.issubdtype(data.dtype["red"], np.integer):
        return raw / 255.0
    return np.clip(raw, 0.0, 1.0)


def _optional_int(data: np.ndarray, name: str) -> Optional[np.ndarray]:
    if name not in (data.dtype.names or ()):
        return None
    return np.asarray(data[name], dtype=np.int64)


def _color_bytes(colors: np.ndarray) -> np.ndarray:
    return np.round(np.clip(colors, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_cloud(path: PathLike) -> PointCloud:
    ply = _load(path)
    data = _vertex(ply, path)
    _require(data, _XYZ + _RGB, path)

    normals = None
    if all(n in (data.dtype.names or ()) for n in _NORMAL):
        normals = _stack(data, _NORMAL)
        norm = np.linalg.norm(normals, axis=1)
        if np.any(norm < 1e-12):
            logger.warning("%s: zero-length normals present, normals will be estimated", path)
            normals = None
        else:
            # stored as float32 by most tools
            normals = normals / norm[:, None]

    cloud = PointCloud(
        points=_stack(data, _XYZ),
        colors=_colors(data),
        normals=normals,
        semantic_labels=_optional_int(data, "label"),
        instance_labels=_optional_int(data, "instance"),
    )
    logger.info("Read %d points from %s", len(cloud), path)
    return cloud


def write_cloud(path: PathLike, cloud: PointCloud, text: bool = False) -> None:
    fields: List[Tuple[str, str]] = [("x", "f8"), ("y", "f8"), ("z", "f8"),
                                     ("red", "u1"), ("green", "u1"), ("blue", "u1")]
    if cloud.normals is not None:
        fields += [("nx", "f8"), ("ny", "f8"), ("nz", "f8")]
    if cloud.semantic_labels is not None:
        fields.append(("label", "i4"))
    if cloud.instance_labels is not None:
        fields.append(("instance", "i4"))

    vertex = np.empty(len(cloud), dtype=fields)
    for d, name in enumerate(_XYZ):
        vertex[name] = cloud.points[:, d]
    rgb = _color_bytes(cloud.colors)
    for d, name in enumerate(_RGB):
        vertex[name] = rgb[:, d]
    if cloud.normals is not None:
        for d, name in enumerate(_NORMAL):
            vertex[name] = cloud.normals[:, d]
    if cloud.semantic_labels is not None:
        vertex["label"] = cloud.semantic_labels
    if cloud.instance_labels is not None:
        vertex["instance"] = cloud.instance_labels

    el = PlyElement.describe(vertex, "vertex")
    PlyData([el], text=text, byte_order="<").write(str(path))
    logger.info("Wrote %d points to %s", len(cloud), path)


def write_grid(
    path: PathLike,
    grid: VoxelGrid,
    segments: Optional[np.ndarray] = None,
    text: bool = False,
) -> None:
    """
    Write one vertex per cell at its centroid. Pass `segments` to add the
    supervoxel id of every cell as a `segment` property.
    """
    fields: List[Tuple[str, str]] = [
        ("x", "f8"), ("y", "f8"), ("z", "f8"),
        ("red", "u1"), ("green", "u1"), ("blue", "u1"),
        ("nx", "f8"), ("ny", "f8"), ("nz", "f8"),
        ("vx", "i4"), ("vy", "i4"), ("vz", "i4"),
        ("count", "i4"), ("label", "i4"), ("instance", "i4"),
    ]
    if segments is not None:
        fields.append(("segment", "i4"))

    n = len(grid)
    vertex = np.empty(n, dtype=fields)
    for d, name in enumerate(_XYZ):
        vertex[name] = grid.centroids[:, d]
    rgb = _color_bytes(grid.colors)
    for d, name in enumerate(_RGB):
        vertex[name] = rgb[:, d]
    for d, name in enumerate(_NORMAL):
        vertex[name] = grid.normals[:, d]
    for d, name in enumerate(_CELL):
        vertex[name] = grid.coords[:, d]
    vertex["count"] = grid.point_counts
    vertex["label"] = grid.semantic_labels
    vertex["instance"] = grid.instance_labels
    if segments is not None:
        vertex["segment"] = np.asarray(segments, dtype=np.int64)

    comments = [
        f"resolution {grid.resolution!r}",
        "origin " + " ".join(repr(float(v)) for v in grid.origin),
        "normals " + ("source" if grid.has_source_normals else "estimated"),
    ]
    el = PlyElement.describe(vertex, "vertex")
    PlyData([el], text=text, byte_order="<", comments=comments).write(str(path))
    logger.info("Wrote %d cells to %s", n, path)


def _header_values(ply: PlyData, key: str, path: PathLike) -> List[str]:
    for comment in ply.comments:
        parts = comment.split()
        if parts and parts[0] == key:
            return parts[1:]
    raise ParseError(str(path), f"missing '{key}' header comment")


def read_grid(path: PathLike) -> Tuple[VoxelGrid, Optional[np.ndarray]]:
    """Read a grid written by write_grid; returns (grid, segments or None)."""
    ply = _load(path)
    data = _vertex(ply, path)
    _require(data, _XYZ + _RGB + _NORMAL + _CELL + ("count",), path)

    try:
        resolution = float(_header_values(ply, "resolution", path)[0])
        origin = np.asarray([float(v) for v in _header_values(ply, "origin", path)], dtype=np.float64)
    except (IndexError, ValueError) as exc:
        raise ParseError(str(path), "malformed grid header comment") from exc
    if origin.shape != (3,):
        raise ParseError(str(path), "origin comment needs three values")
    normals_src = ply.comments and any(c.strip() == "normals source" for c in ply.comments)

    coords = _stack(data, _CELL, dtype=np.int64)
    order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))

    n = coords.shape[0]
    semantic = _optional_int(data, "label")
    instance = _optional_int(data, "instance")
    segments = _optional_int(data, "segment")

    def take(values: Optional[np.ndarray]) -> np.ndarray:
        if values is None:
            return np.full(n, UNLABELED, dtype=np.int64)
        return values[order]

    grid = VoxelGrid(
        resolution=resolution,
        origin=origin,
        coords=coords[order],
        centroids=_stack(data, _XYZ)[order],
        colors=_colors(data)[order],
        normals=_stack(data, _NORMAL)[order],
        point_counts=np.asarray(data["count"], dtype=np.int64)[order],
        semantic_labels=take(semantic),
        instance_labels=take(instance),
        has_source_normals=bool(normals_src),
    )
    logger.info("Read %d cells from %s", n, path)
    return grid, (segments[order] if segments is not None else None)
