"""
Finite-difference verification of the analytic loss gradients.

Random cases are drawn away from the nonsmooth points of each term (norm
kinks, hinge boundaries, probability clamps) so central differences are a
valid reference there.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from core.config import LossSettings
from core.errors import SamplingError
from core.losses import (
    LossTerm,
    Membership,
    covariance_loss,
    distance_loss,
    membership_kernel,
    occupancy_loss,
    regularization_loss,
    semantic_loss,
    spatial_loss,
    variance_loss,
)

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-4

# minimum distance from any kink, hinge or clamp boundary
_MARGIN = 1e-3


def numeric_gradient(func: Callable[[np.ndarray], float], x: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + eps
        f_plus = func(x)
        x.flat[i] = orig - eps
        f_minus = func(x)
        x.flat[i] = orig
        grad.flat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """|a - n| / max(|a|, |n|, 1e-8) over the flattened gradients."""
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-8)
    return diff / scale


@dataclass(frozen=True)
class GradCase:
    logits: np.ndarray
    labels: np.ndarray
    feature: np.ndarray
    offset: np.ndarray
    positions: np.ndarray
    sigma: np.ndarray
    occupancy: np.ndarray
    membership: Membership
    weights: np.ndarray

    def arrays(self) -> Dict[str, np.ndarray]:
        return {
            "logits": self.logits,
            "feature": self.feature,
            "offset": self.offset,
            "sigma": self.sigma,
            "occupancy": self.occupancy,
        }


@dataclass(frozen=True)
class GradCheckResult:
    term: str
    argument: str
    max_error: float
    cases: int
    passed: bool


def _smooth_enough(case: GradCase, settings: LossSettings) -> bool:
    m = case.membership
    owner = m.owner

    residual = case.offset - (m.mean(case.positions)[owner] - case.positions)
    if np.linalg.norm(residual, axis=1).min() < _MARGIN:
        return False

    centers = m.mean(case.feature)
    dist = np.linalg.norm(case.feature - centers[owner], axis=1)
    if np.abs(dist - settings.delta_v).min() < _MARGIN or dist.min() < _MARGIN:
        return False
    pair = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
    iu = np.triu_indices(m.n_instances, k=1)
    if iu[0].size and np.abs(pair[iu] - 2.0 * settings.delta_d).min() < _MARGIN:
        return False
    if np.linalg.norm(centers, axis=1).min() < _MARGIN:
        return False

    sizes = m.sizes[owner].astype(np.float64)
    if np.abs(case.occupancy - np.log(sizes)).min() < _MARGIN:
        return False

    p = membership_kernel(case.feature, case.offset, case.positions, case.sigma, m).probability
    clamp = settings.prob_clamp
    near_low = np.abs(np.log(p) - np.log(clamp)) < 0.05
    near_high = np.abs((1.0 - p) - clamp) < 0.05 * clamp
    return not (near_low.any() or near_high.any())


def random_case(
    rng: np.random.Generator,
    settings: LossSettings,
    n_instances: int = 3,
    per_instance: Tuple[int, int] = (2, 5),
    n_classes: int = 5,
    dim: int = 4,
    max_tries: int = 100,
) -> GradCase:
    for _ in range(max_tries):
        sizes = rng.integers(per_instance[0], per_instance[1] + 1, size=n_instances)
        owner = np.repeat(np.arange(n_instances), sizes)
        rng.shuffle(owner)
        n = owner.shape[0]
        membership = Membership(owner=owner, sizes=sizes)

        codes = rng.normal(0.0, 1.2, size=(n_instances, dim))
        centers = rng.uniform(-1.0, 1.0, size=(n_instances, 3))
        case = GradCase(
            logits=rng.normal(0.0, 2.0, size=(n, n_classes)),
            labels=rng.integers(0, n_classes, size=n),
            feature=codes[owner] + rng.normal(0.0, 0.3, size=(n, dim)),
            offset=rng.normal(0.0, 0.3, size=(n, 3)),
            positions=centers[owner] + rng.normal(0.0, 0.4, size=(n, 3)),
            sigma=np.stack([rng.uniform(0.8, 2.0, size=n), rng.uniform(0.4, 1.2, size=n)], axis=1),
            occupancy=np.log(sizes[owner]) + rng.normal(0.0, 0.5, size=n),
            membership=membership,
            weights=rng.uniform(0.5, 1.5, size=n),
        )
        if _smooth_enough(case, settings):
            return case
    raise SamplingError(f"no smooth gradient case found in {max_tries} draws")


TermFn = Callable[[GradCase, Dict[str, np.ndarray]], LossTerm]


def _probability_term(case: GradCase, a: Dict[str, np.ndarray]) -> LossTerm:
    """Weighted sum of each voxel's own-instance probability."""
    kernel = membership_kernel(a["feature"], a["offset"], case.positions, a["sigma"], case.membership)
    w = np.zeros_like(kernel.log_p)
    w[np.arange(case.membership.n_voxels), case.membership.owner] = case.weights
    return LossTerm(float(np.sum(case.weights * kernel.own())), kernel.vjp(w))


def term_table(settings: LossSettings) -> Dict[str, Tuple[TermFn, Tuple[str, ...]]]:
    """Every checked term with the predicted arguments it is differentiated by."""
    return {
        "semantic": (lambda c, a: semantic_loss(a["logits"], c.labels), ("logits",)),
        "spatial": (lambda c, a: spatial_loss(a["offset"], c.positions, c.membership), ("offset",)),
        "variance": (lambda c, a: variance_loss(a["feature"], c.membership, settings.delta_v), ("feature",)),
        "distance": (lambda c, a: distance_loss(a["feature"], c.membership, settings.delta_d), ("feature",)),
        "regularization": (lambda c, a: regularization_loss(a["feature"], c.membership), ("feature",)),
        "covariance": (
            lambda c, a: covariance_loss(a["feature"], a["offset"], c.positions, a["sigma"],
                                         c.membership, settings.prob_clamp),
            ("feature", "offset", "sigma"),
        ),
        "probability": (_probability_term, ("feature", "offset", "sigma")),
        "occupancy": (lambda c, a: occupancy_loss(a["occupancy"], c.membership), ("occupancy",)),
    }


def check_case(
    case: GradCase,
    settings: LossSettings,
    eps: float = DEFAULT_EPS,
) -> List[Tuple[str, str, float]]:
    rows = []
    for term, (fn, arguments) in term_table(settings).items():
        base = case.arrays()
        analytic = fn(case, base).grads
        for arg in arguments:
            def scalar(x: np.ndarray, arg: str = arg, fn: TermFn = fn) -> float:
                trial = dict(base)
                trial[arg] = x
                return fn(case, trial).value

            numeric = numeric_gradient(scalar, base[arg], eps)
            rows.append((term, arg, gradient_error(analytic[arg], numeric)))
    return rows


def run_gradcheck(
    settings: Optional[LossSettings] = None,
    n_cases: int = 100,
    seed: int = 0,
    eps: float = DEFAULT_EPS,
    tol: float = DEFAULT_TOL,
) -> List[GradCheckResult]:
    settings = settings or LossSettings()
    rng = np.random.default_rng(seed)
    worst: Dict[Tuple[str, str], float] = {}
    for _ in range(n_cases):
        case = random_case(rng, settings)
        for term, arg, err in check_case(case, settings, eps):
            key = (term, arg)
            worst[key] = max(worst.get(key, 0.0), err)

    results = [
        GradCheckResult(term=t, argument=a, max_error=e, cases=n_cases, passed=e < tol)
        for (t, a), e in worst.items()
    ]
    failed = [r for r in results if not r.passed]
    if failed:
        logger.warning("Gradient check failed for %d of %d term/argument pairs", len(failed), len(results))
    else:
        logger.info("Gradient check passed for %d term/argument pairs over %d cases", len(results), n_cases)
    return results
