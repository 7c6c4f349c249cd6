"""
Training losses over per-voxel predictions, each returned with its analytic
gradient with respect to every predicted quantity it depends on.

All per-instance averages use the instance sizes N_c of the ground truth;
C is the number of instances. Norms in the spatial and occupancy terms are
unsquared, with a zero subgradient at the kink.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, NamedTuple, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.special import log_softmax, softmax

from core.config import LossSettings
from core.errors import (
    AlignmentError,
    CovarianceError,
    CoverageError,
    EmptyInputError,
    EmptyInstanceError,
    LabelError,
)
from core.geometry import InstanceGroundTruth, VoxelGrid, instance_index, instance_sizes
from core.oracle import PredictionSet

logger = logging.getLogger(__name__)

Grads = Dict[str, np.ndarray]


class LossTerm(NamedTuple):
    value: float
    grads: Grads


class FeatureTerms(NamedTuple):
    variance: LossTerm
    distance: LossTerm
    regularization: LossTerm


@dataclass(frozen=True)
class Membership:
    """Voxel-to-instance assignment: owner[i] in [0, C), sizes[c] = N_c."""

    owner: np.ndarray
    sizes: np.ndarray

    def __post_init__(self) -> None:
        owner = np.asarray(self.owner, dtype=np.int64).reshape(-1)
        if owner.size and owner.min() < 0:
            raise CoverageError("every voxel must belong to an instance")
        object.__setattr__(self, "owner", owner)
        object.__setattr__(self, "sizes", np.asarray(self.sizes, dtype=np.int64).reshape(-1))

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "Membership":
        _, inverse = np.unique(np.asarray(labels).reshape(-1), return_inverse=True)
        inverse = inverse.reshape(-1)
        return cls(owner=inverse, sizes=np.bincount(inverse))

    @classmethod
    def from_ground_truth(cls, gt: Sequence[InstanceGroundTruth], n_voxels: int) -> "Membership":
        owner = instance_index(list(gt), n_voxels)
        if np.any(owner < 0):
            raise CoverageError(f"{int(np.sum(owner < 0))} voxels are not covered by ground truth")
        return cls(owner=owner, sizes=instance_sizes(gt))

    @property
    def n_voxels(self) -> int:
        return int(self.owner.shape[0])

    @property
    def n_instances(self) -> int:
        return int(self.sizes.shape[0])

    @cached_property
    def indicator(self) -> csr_matrix:
        """(C, N) sparse 0/1 matrix; indicator @ x sums x per instance."""
        n = self.n_voxels
        return csr_matrix((np.ones(n), (self.owner, np.arange(n))), shape=(self.n_instances, n))

    def mean(self, values: np.ndarray) -> np.ndarray:
        """Per-instance mean of per-voxel rows."""
        values = np.asarray(values, dtype=np.float64)
        sums = self.indicator @ values.reshape(self.n_voxels, -1)
        out = sums / self.sizes[:, None]
        return out.reshape((self.n_instances,) + values.shape[1:])

    def check(self, n: int, what: str) -> None:
        if n != self.n_voxels:
            raise AlignmentError(f"{what} has {n} rows for {self.n_voxels} voxels")
        if self.n_voxels == 0:
            raise EmptyInputError("no voxels to evaluate")


# ---------------------------------------------------------------------------
# Semantic
# ---------------------------------------------------------------------------

def semantic_loss(logits: np.ndarray, labels: np.ndarray) -> LossTerm:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, n_classes = logits.shape
    if n == 0:
        raise EmptyInputError("no voxels to evaluate")
    if labels.shape[0] != n:
        raise AlignmentError(f"{labels.shape[0]} labels for {n} logit rows")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LabelError(f"labels must lie in [0, {n_classes})")

    rows = np.arange(n)
    logp = log_softmax(logits, axis=1)
    value = float(-logp[rows, labels].mean())
    grad = softmax(logits, axis=1)
    grad[rows, labels] -= 1.0
    return LossTerm(value, {"logits": grad / n})


# ---------------------------------------------------------------------------
# Spatial
# ---------------------------------------------------------------------------

def instance_targets(positions: np.ndarray, membership: Membership) -> np.ndarray:
    """Regression target of every instance: the mean of its voxel positions."""
    return membership.mean(positions)


def spatial_loss(offset: np.ndarray, positions: np.ndarray, membership: Membership) -> LossTerm:
    offset = np.asarray(offset, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64)
    membership.check(offset.shape[0], "offset")
    owner = membership.owner
    targets = instance_targets(positions, membership)

    residual = offset - (targets[owner] - positions)
    norm = np.linalg.norm(residual, axis=1)
    weight = 1.0 / (membership.n_instances * membership.sizes[owner])
    value = float(np.sum(norm * weight))

    safe = np.where(norm > 0, norm, 1.0)
    grad = np.where(norm[:, None] > 0, residual / safe[:, None], 0.0) * weight[:, None]
    return LossTerm(value, {"offset": grad})


# ---------------------------------------------------------------------------
# Feature
# ---------------------------------------------------------------------------

def _scatter_to_voxels(per_instance: np.ndarray, membership: Membership) -> np.ndarray:
    """Chain rule through u_c = mean(s over c): d/ds_k = d/du_c(k) / N_c(k)."""
    return per_instance[membership.owner] / membership.sizes[membership.owner][:, None]


def variance_loss(feature: np.ndarray, membership: Membership, delta_v: float) -> LossTerm:
    owner = membership.owner
    centers = membership.mean(feature)
    delta = feature - centers[owner]
    dist = np.linalg.norm(delta, axis=1)
    hinge = np.clip(dist - delta_v, 0.0, None)
    weight = 1.0 / (membership.n_instances * membership.sizes[owner])
    value = float(np.sum(hinge ** 2 * weight))

    safe = np.where(dist > 0, dist, 1.0)
    g = (2.0 * hinge * weight / safe)[:, None] * delta
    # the instance mean depends on every member
    grad = g - membership.mean(g)[owner]
    return LossTerm(value, {"feature": grad})


def distance_loss(feature: np.ndarray, membership: Membership, delta_d: float) -> LossTerm:
    n_inst = membership.n_instances
    if n_inst < 2:
        return LossTerm(0.0, {"feature": np.zeros_like(feature)})
    centers = membership.mean(feature)
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    hinge = np.clip(2.0 * delta_d - dist, 0.0, None)
    np.fill_diagonal(hinge, 0.0)
    norm = 1.0 / (n_inst * (n_inst - 1))
    # unordered pairs only
    value = float(np.sum(np.triu(hinge, k=1) ** 2) * norm)

    safe = np.where(dist > 0, dist, 1.0)
    coef = np.where(dist > 0, -2.0 * hinge / safe, 0.0) * norm
    grad_centers = np.einsum("ab,abk->ak", coef, diff)
    return LossTerm(value, {"feature": _scatter_to_voxels(grad_centers, membership)})


def regularization_loss(feature: np.ndarray, membership: Membership) -> LossTerm:
    centers = membership.mean(feature)
    norms = np.linalg.norm(centers, axis=1)
    value = float(norms.mean())
    safe = np.where(norms > 0, norms, 1.0)
    grad_centers = np.where(norms[:, None] > 0, centers / safe[:, None], 0.0) / membership.n_instances
    return LossTerm(value, {"feature": _scatter_to_voxels(grad_centers, membership)})


def feature_loss(feature: np.ndarray, membership: Membership, settings: LossSettings) -> FeatureTerms:
    feature = np.asarray(feature, dtype=np.float64)
    membership.check(feature.shape[0], "feature")
    return FeatureTerms(
        variance=variance_loss(feature, membership, settings.delta_v),
        distance=distance_loss(feature, membership, settings.delta_d),
        regularization=regularization_loss(feature, membership),
    )


# ---------------------------------------------------------------------------
# Covariance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MembershipKernel:
    """
    Gaussian membership of every voxel in every instance. log_p[i, c] is
    -(|s_i - u_c| / sigma_s^c)^2 - (|mu_i + d_i - e_c| / sigma_d^c)^2.
    """

    membership: Membership
    feature: np.ndarray
    spatial: np.ndarray
    feature_centers: np.ndarray
    spatial_centers: np.ndarray
    sigma_s: np.ndarray
    sigma_d: np.ndarray
    feature_sq: np.ndarray
    spatial_sq: np.ndarray
    log_p: np.ndarray = field(repr=False)

    @property
    def probability(self) -> np.ndarray:
        return np.exp(self.log_p)

    def own(self) -> np.ndarray:
        """p_i of every voxel in its own instance."""
        return self.probability[np.arange(self.membership.n_voxels), self.membership.owner]

    def backward(self, grad_log_p: np.ndarray) -> Grads:
        """Pull a gradient on log_p back to feature, offset and sigma."""
        m = self.membership
        owner, sizes = m.owner, m.sizes
        g = np.asarray(grad_log_p, dtype=np.float64)
        col = g.sum(axis=0)

        inv_s2 = 1.0 / self.sigma_s ** 2
        inv_d2 = 1.0 / self.sigma_d ** 2

        def through_centers(x: np.ndarray, centers: np.ndarray, inv2: np.ndarray) -> np.ndarray:
            # direct dependence on x_i
            direct = -2.0 * (x * (g @ inv2)[:, None] - g @ (centers * inv2[:, None]))
            # dependence through the instance center
            via = 2.0 * inv2[:, None] * (g.T @ x - col[:, None] * centers)
            return direct + via[owner] / sizes[owner][:, None]

        grad_feature = through_centers(self.feature, self.feature_centers, inv_s2)
        grad_offset = through_centers(self.spatial, self.spatial_centers, inv_d2)

        d_sigma_s = 2.0 * np.sum(g * self.feature_sq, axis=0) / self.sigma_s ** 3
        d_sigma_d = 2.0 * np.sum(g * self.spatial_sq, axis=0) / self.sigma_d ** 3
        grad_sigma = np.stack([d_sigma_s[owner], d_sigma_d[owner]], axis=1) / sizes[owner][:, None]
        return {"feature": grad_feature, "offset": grad_offset, "sigma": grad_sigma}

    def vjp(self, weights: np.ndarray) -> Grads:
        """Gradient of sum(weights * p) over all (voxel, instance) pairs."""
        return self.backward(np.asarray(weights, dtype=np.float64) * self.probability)


def membership_kernel(
    feature: np.ndarray,
    offset: np.ndarray,
    positions: np.ndarray,
    sigma: np.ndarray,
    membership: Membership,
) -> MembershipKernel:
    feature = np.asarray(feature, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    membership.check(feature.shape[0], "feature")
    if sigma.shape != (membership.n_voxels, 2):
        raise AlignmentError(f"sigma has shape {sigma.shape}, expected ({membership.n_voxels}, 2)")
    if sigma.min() <= 0:
        raise CovarianceError("covariances must be strictly positive")

    spatial = np.asarray(positions, dtype=np.float64) + np.asarray(offset, dtype=np.float64)
    u = membership.mean(feature)
    e = membership.mean(spatial)
    sig = membership.mean(sigma)
    sigma_s, sigma_d = sig[:, 0], sig[:, 1]

    # |s - u|^2 expanded; exact zero when s equals u
    feature_sq = np.clip(
        np.sum(feature ** 2, axis=1)[:, None] - 2.0 * feature @ u.T + np.sum(u ** 2, axis=1)[None, :],
        0.0, None,
    )
    spatial_sq = np.sum((spatial[:, None, :] - e[None, :, :]) ** 2, axis=2)
    log_p = -feature_sq / sigma_s ** 2 - spatial_sq / sigma_d ** 2
    return MembershipKernel(
        membership=membership,
        feature=feature,
        spatial=spatial,
        feature_centers=u,
        spatial_centers=e,
        sigma_s=sigma_s,
        sigma_d=sigma_d,
        feature_sq=feature_sq,
        spatial_sq=spatial_sq,
        log_p=log_p,
    )


def covariance_loss(
    feature: np.ndarray,
    offset: np.ndarray,
    positions: np.ndarray,
    sigma: np.ndarray,
    membership: Membership,
    clamp: float = 1e-7,
) -> LossTerm:
    """Binary cross-entropy of p over all voxels, for every instance."""
    kernel = membership_kernel(feature, offset, positions, sigma, membership)
    n, n_inst = membership.n_voxels, membership.n_instances
    y = np.zeros((n, n_inst))
    y[np.arange(n), membership.owner] = 1.0

    p = kernel.probability
    pc = np.clip(p, clamp, 1.0 - clamp)
    bce = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    scale = 1.0 / (n_inst * n)
    value = float(bce.sum() * scale)

    # clamped entries carry no gradient
    live = (p > clamp) & (p < 1.0 - clamp)
    safe = np.where(live, 1.0 - p, 1.0)
    grad_log_p = np.where(live, -y + (1.0 - y) * p / safe, 0.0) * scale
    return LossTerm(value, kernel.backward(grad_log_p))


# ---------------------------------------------------------------------------
# Occupancy
# ---------------------------------------------------------------------------

def occupancy_loss(occupancy: np.ndarray, membership: Membership) -> LossTerm:
    occupancy = np.asarray(occupancy, dtype=np.float64).reshape(-1)
    membership.check(occupancy.shape[0], "occupancy")
    owner = membership.owner
    residual = occupancy - np.log(membership.sizes[owner].astype(np.float64))
    weight = 1.0 / (membership.n_instances * membership.sizes[owner])
    value = float(np.sum(np.abs(residual) * weight))
    return LossTerm(value, {"occupancy": np.sign(residual) * weight})


def relative_error(occupancy: np.ndarray, size: int) -> float:
    """|N_c - exp(mean o)| / N_c for one instance."""
    if size < 1:
        raise EmptyInstanceError(f"instance size must be at least 1, got {size}")
    predicted = float(np.exp(np.mean(np.asarray(occupancy, dtype=np.float64))))
    return abs(size - predicted) / size


def relative_errors(preds: PredictionSet, gt: Sequence[InstanceGroundTruth]) -> np.ndarray:
    return np.asarray([relative_error(preds.occupancy[inst.voxel_indices], inst.size) for inst in gt])


# ---------------------------------------------------------------------------
# Joint
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossBreakdown:
    semantic: float
    spatial: float
    variance: float
    distance: float
    regularization: float
    covariance: float
    occupancy: float
    grads: Grads = field(default_factory=dict, repr=False, compare=False)

    @property
    def feature_term(self) -> float:
        return self.variance + self.distance + self.regularization

    @property
    def embedding(self) -> float:
        return self.spatial + self.feature_term + self.covariance

    @property
    def joint(self) -> float:
        return self.semantic + self.embedding + self.occupancy

    def as_dict(self) -> Dict[str, float]:
        return {
            "semantic": self.semantic,
            "spatial": self.spatial,
            "variance": self.variance,
            "distance": self.distance,
            "regularization": self.regularization,
            "covariance": self.covariance,
            "occupancy": self.occupancy,
            "feature_term": self.feature_term,
            "embedding": self.embedding,
            "joint": self.joint,
        }


def _accumulate(total: Grads, terms: List[LossTerm]) -> None:
    for term in terms:
        for name, g in term.grads.items():
            total[name] = total[name] + g


def joint_loss(
    preds: PredictionSet,
    grid: VoxelGrid,
    gt: Sequence[InstanceGroundTruth],
    settings: LossSettings,
) -> LossBreakdown:
    """Every term over the voxels covered by `gt`; gradients are full-grid sized."""
    if len(preds) != len(grid):
        raise AlignmentError(f"{len(preds)} predictions for {len(grid)} cells")
    owner_all = instance_index(list(gt), len(grid))
    covered = np.flatnonzero(owner_all >= 0)
    if covered.size == 0:
        raise EmptyInputError("ground truth covers no voxel")

    sub = preds.subset(covered)
    membership = Membership(owner=owner_all[covered], sizes=instance_sizes(gt))
    labels = np.asarray([inst.semantic_label for inst in gt], dtype=np.int64)[membership.owner]
    positions = grid.centroids[covered]

    sem = semantic_loss(sub.logits, labels)
    sp = spatial_loss(sub.offset, positions, membership)
    feat = feature_loss(sub.feature, membership, settings)
    cov = covariance_loss(sub.feature, sub.offset, positions, sub.sigma, membership, settings.prob_clamp)
    occ = occupancy_loss(sub.occupancy, membership)

    local: Grads = {
        "logits": np.zeros_like(sub.logits),
        "feature": np.zeros_like(sub.feature),
        "offset": np.zeros_like(sub.offset),
        "sigma": np.zeros_like(sub.sigma),
        "occupancy": np.zeros_like(sub.occupancy),
    }
    _accumulate(local, [sem, sp, feat.variance, feat.distance, feat.regularization, cov, occ])

    grads: Grads = {}
    for name, g in local.items():
        full = np.zeros((len(grid),) + g.shape[1:])
        full[covered] = g
        grads[name] = full

    breakdown = LossBreakdown(
        semantic=sem.value,
        spatial=sp.value,
        variance=feat.variance.value,
        distance=feat.distance.value,
        regularization=feat.regularization.value,
        covariance=cov.value,
        occupancy=occ.value,
        grads=grads,
    )
    logger.info("Joint loss %.6f over %d voxels, %d instances", breakdown.joint, covered.size, len(gt))
    return breakdown
