"""
Synthetic per-voxel predictions standing in for a trained network.

With all noise at zero the emitted values sit exactly at the optimum of the
training losses: offsets point at the instance centroid, log-occupancy is
log N_c, feature codes are per-instance vertices at least 2*delta_d apart,
and logits put a fixed margin on the true class.

Binary format (little-endian): a 24-byte header
    magic b"VXPR" | version u32 | voxel count u64 | C u32 | K u32
followed by one float64 record per voxel in grid order:
    C logits | K feature | 3 offset | (sigma_s, sigma_d) | occupancy
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.config import OracleSettings
from core.errors import AlignmentError, CovarianceError, CoverageError, LabelError, ParseError
from core.geometry import InstanceGroundTruth, VoxelGrid, instance_index, instance_sizes

logger = logging.getLogger(__name__)

MAGIC = b"VXPR"
VERSION = 1
_HEADER = struct.Struct("<4sIQII")


@dataclass(frozen=True)
class PredictionSet:
    """Per-voxel prediction arrays, aligned with grid iteration order."""

    logits: np.ndarray      # (N, C)
    feature: np.ndarray     # (N, K)
    offset: np.ndarray      # (N, 3), meters
    sigma: np.ndarray       # (N, 2): sigma_s, sigma_d
    occupancy: np.ndarray   # (N,), natural log of the instance voxel count

    def __post_init__(self) -> None:
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.ndim != 2:
            raise AlignmentError(f"logits must be (N, C), got shape {logits.shape}")
        n = logits.shape[0]
        object.__setattr__(self, "logits", logits)
        for name, cols in (("feature", None), ("offset", 3), ("sigma", 2)):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] != n or (cols is not None and arr.shape[1] != cols):
                raise AlignmentError(f"{name} has shape {arr.shape}, expected ({n}, {cols or 'K'})")
            object.__setattr__(self, name, arr)
        occ = np.asarray(self.occupancy, dtype=np.float64).reshape(-1)
        if occ.shape[0] != n:
            raise AlignmentError(f"occupancy has {occ.shape[0]} entries, expected {n}")
        object.__setattr__(self, "occupancy", occ)
        if n and self.sigma.min() <= 0:
            raise CovarianceError("covariances must be strictly positive")

    def __len__(self) -> int:
        return self.logits.shape[0]

    @property
    def n_classes(self) -> int:
        return self.logits.shape[1]

    @property
    def embedding_dim(self) -> int:
        return self.feature.shape[1]

    def subset(self, indices: np.ndarray) -> "PredictionSet":
        return PredictionSet(
            logits=self.logits[indices],
            feature=self.feature[indices],
            offset=self.offset[indices],
            sigma=self.sigma[indices],
            occupancy=self.occupancy[indices],
        )


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------

def instance_code(index: int, dim: int, scale: float) -> np.ndarray:
    """
    Code of the index-th instance: +-scale on one axis, moving to shells of
    radius 3*scale, 5*scale, ... once all 2*dim signed axes are used. With
    scale >= 1.5 / sqrt(2) any two codes are at least 3.0 apart.
    """
    shell, j = divmod(index, 2 * dim)
    axis = j % dim
    sign = 1.0 if j < dim else -1.0
    code = np.zeros(dim)
    code[axis] = sign * scale * (2 * shell + 1)
    return code


def instance_codes(
    n_instances: int,
    dim: int,
    scale: float,
    confusable: Sequence[Tuple[int, int]] = (),
    pair_distance: float = 0.0,
) -> np.ndarray:
    codes = np.stack([instance_code(i, dim, scale) for i in range(n_instances)]) if n_instances else np.zeros((0, dim))
    for a, b in confusable:
        axis = int(np.argmax(np.abs(codes[a])))
        step = np.zeros(dim)
        step[(axis + 1) % dim] = pair_distance
        codes[b] = codes[a] + step
    return codes


def _positions(gt: Sequence[InstanceGroundTruth], ids: Iterable[Tuple[int, int]]) -> List[Tuple[int, int]]:
    pos = {inst.instance_id: i for i, inst in enumerate(gt)}
    out = []
    for a, b in ids:
        if a not in pos or b not in pos:
            raise CoverageError(f"confusable pair ({a}, {b}) names an unknown instance")
        out.append((pos[a], pos[b]))
    return out


def emit_predictions(
    grid: VoxelGrid,
    gt: Sequence[InstanceGroundTruth],
    settings: OracleSettings,
    n_classes: int,
    embedding_dim: int,
    confusable_pairs: Sequence[Tuple[int, int]] = (),
) -> PredictionSet:
    n = len(grid)
    owner = instance_index(list(gt), n)
    uncovered = np.flatnonzero(owner < 0)
    if uncovered.size:
        raise CoverageError(f"{uncovered.size} of {n} voxels are not covered by ground truth")

    classes = np.asarray([max(inst.semantic_label, 0) for inst in gt], dtype=np.int64)
    if classes.size and classes.max() >= n_classes:
        raise LabelError(f"ground-truth class {int(classes.max())} outside [0, {n_classes})")

    noise = settings.noise
    rng = np.random.default_rng(noise.rng_seed)
    n_inst = len(gt)

    codes = instance_codes(n_inst, embedding_dim, settings.code_scale,
                           _positions(gt, confusable_pairs), settings.pair_code_distance)
    centroids = np.stack([inst.centroid for inst in gt]) if n_inst else np.zeros((0, 3))
    log_sizes = np.log(instance_sizes(gt).astype(np.float64))

    # fixed draw order: instance bias, feature, offset, occupancy, logits
    bias = rng.normal(0.0, noise.sigma_occ_instance, size=n_inst) if noise.sigma_occ_instance > 0 else np.zeros(n_inst)

    feature = codes[owner]
    if noise.sigma_feat > 0:
        feature = feature + rng.normal(0.0, noise.sigma_feat, size=feature.shape)

    offset = centroids[owner] - grid.centroids
    if noise.sigma_off > 0:
        offset = offset + rng.normal(0.0, noise.sigma_off, size=offset.shape)

    occupancy = log_sizes[owner] + bias[owner]
    if noise.sigma_occ > 0:
        occupancy = occupancy + rng.normal(0.0, noise.sigma_occ, size=n)

    logits = np.zeros((n, n_classes))
    logits[np.arange(n), classes[owner]] = settings.logit_margin
    if noise.sigma_logit > 0:
        logits = logits + rng.normal(0.0, noise.sigma_logit, size=logits.shape)

    sigma = np.tile([settings.sigma_s, settings.sigma_d], (n, 1))
    logger.info("Emitted predictions for %d voxels over %d instances", n, n_inst)
    return PredictionSet(logits=logits, feature=feature, offset=offset, sigma=sigma, occupancy=occupancy)


# ---------------------------------------------------------------------------
# Binary I/O
# ---------------------------------------------------------------------------

def record_dtype(n_classes: int, embedding_dim: int) -> np.dtype:
    return np.dtype([
        ("logits", "<f8", (n_classes,)),
        ("feature", "<f8", (embedding_dim,)),
        ("offset", "<f8", (3,)),
        ("sigma", "<f8", (2,)),
        ("occupancy", "<f8"),
    ])


def encode_predictions(preds: PredictionSet) -> bytes:
    dtype = record_dtype(preds.n_classes, preds.embedding_dim)
    records = np.empty(len(preds), dtype=dtype)
    records["logits"] = preds.logits
    records["feature"] = preds.feature
    records["offset"] = preds.offset
    records["sigma"] = preds.sigma
    records["occupancy"] = preds.occupancy
    header = _HEADER.pack(MAGIC, VERSION, len(preds), preds.n_classes, preds.embedding_dim)
    return header + records.tobytes()


def decode_predictions(buf: bytes, source: str = "<bytes>") -> PredictionSet:
    if len(buf) < _HEADER.size:
        raise ParseError(source, f"truncated header ({len(buf)} bytes)", offset=len(buf))
    magic, version, n, n_classes, dim = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ParseError(source, f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise ParseError(source, f"unsupported version {version}", offset=4)
    if n_classes < 1 or dim < 1:
        raise ParseError(source, "class count and embedding dim must be positive", offset=12)

    dtype = record_dtype(n_classes, dim)
    expected = _HEADER.size + n * dtype.itemsize
    if len(buf) != expected:
        raise ParseError(source, f"expected {expected} bytes for {n} records, found {len(buf)}",
                         offset=min(len(buf), expected))
    if n == 0:
        return PredictionSet(np.zeros((0, n_classes)), np.zeros((0, dim)), np.zeros((0, 3)),
                             np.zeros((0, 2)), np.zeros(0))
    records = np.frombuffer(buf, dtype=dtype, count=n, offset=_HEADER.size)

    flat = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).reshape(n, -1)
    bad = np.flatnonzero(~np.all(np.isfinite(flat), axis=1))
    if bad.size:
        raise ParseError(source, "non-finite value in record", offset=_HEADER.size + int(bad[0]) * dtype.itemsize)
    bad = np.flatnonzero(np.any(records["sigma"] <= 0, axis=1))
    if bad.size:
        raise ParseError(source, "non-positive covariance in record",
                         offset=_HEADER.size + int(bad[0]) * dtype.itemsize)

    return PredictionSet(
        logits=np.array(records["logits"]),
        feature=np.array(records["feature"]),
        offset=np.array(records["offset"]),
        sigma=np.array(records["sigma"]),
        occupancy=np.array(records["occupancy"]),
    )


def write_predictions(path: Union[str, Path], preds: PredictionSet) -> None:
    Path(path).write_bytes(encode_predictions(preds))
    logger.info("Wrote %d prediction records to %s", len(preds), path)


def read_predictions(path: Union[str, Path], expected_voxels: Optional[int] = None) -> PredictionSet:
    p = Path(path)
    try:
        buf = p.read_bytes()
    except OSError as exc:
        raise ParseError(str(p), f"cannot read: {exc.strerror or exc}") from exc
    preds = decode_predictions(buf, str(p))
    if expected_voxels is not None and len(preds) != expected_voxels:
        raise AlignmentError(f"{p}: {len(preds)} records for a grid of {expected_voxels} cells")
    return preds
