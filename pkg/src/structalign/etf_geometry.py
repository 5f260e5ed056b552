"""Simplex ETF prototypes and the feature-geometry diagnostics measured against them."""
import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from cachetools.func import lru_cache

from structalign.exceptions import (
    CategoryCountMismatchError,
    DegenerateCategoryCountError,
    DimensionTooSmallError,
    InsufficientSamplesError,
    ShapeMismatchError,
    ZeroVectorError,
)

logger = logging.getLogger(__name__)

POWER_ITERATION_MAX_STEPS = 1000
POWER_ITERATION_RTOL = 1e-8
ETF_DEFAULT_TOL = 1e-9
_ZERO_NORM = 1e-12


@dataclass(frozen=True)
class EtfPrototypes:
    """A d x C matrix whose unit columns have pairwise inner product -1/(C-1)."""

    matrix: np.ndarray
    seed: int

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def num_categories(self) -> int:
        return self.matrix.shape[1]

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def column(self, category: int) -> np.ndarray:
        return self.matrix[:, category]

    def gram(self) -> np.ndarray:
        return self.matrix.T @ self.matrix

    def scaled_column(self, category: int, factor: float) -> "EtfPrototypes":
        """Copy with one column multiplied by ``factor`` (fault injection for verification)."""
        matrix = np.array(self.matrix)
        matrix[:, category] *= factor
        return EtfPrototypes(matrix=matrix, seed=self.seed)


@dataclass(frozen=True)
class EtfVerification:
    passed: bool
    diag_deviation: float
    offdiag_deviation: float
    tol: float

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "diag_deviation": self.diag_deviation,
            "offdiag_deviation": self.offdiag_deviation,
            "tol": self.tol,
        }


@dataclass(frozen=True)
class FeatureSet:
    """Feature vectors of one modality grouped by category id (rows are samples)."""

    modality: str
    features: Mapping[int, np.ndarray] = field(default_factory=dict)

    @property
    def categories(self) -> tuple[int, ...]:
        return tuple(sorted(self.features))

    def normalized(self) -> "FeatureSet":
        return FeatureSet(
            modality=self.modality,
            features={c: _normalize_rows(np.asarray(v, dtype=np.float64)) for c, v in self.features.items()},
        )

    def means(self) -> dict[int, np.ndarray]:
        """Normalized average of the normalized features, per category."""
        result = {}
        for c in self.categories:
            rows = _normalize_rows(np.asarray(self.features[c], dtype=np.float64))
            result[c] = _normalize_rows(rows.mean(axis=0, keepdims=True))[0]
        return result


@dataclass(frozen=True)
class GeometryReport:
    eta: float
    epsilon: float
    gamma: float
    micd: float
    categories: tuple[int, ...] = ()
    per_category_delta: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "epsilon": self.epsilon,
            "gamma": self.gamma,
            "micd": self.micd,
            "per_category_delta": dict(zip(self.categories, self.per_category_delta)),
        }


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    smallest = float(np.min(norms)) if norms.size else 0.0
    if smallest <= _ZERO_NORM:
        raise ZeroVectorError(f"cannot normalize a vector of norm {smallest:.3e}", norm=smallest)
    return x / norms


def _orthonormal_frame(d: int, c: int, rng: np.random.Generator) -> np.ndarray:
    """Modified Gram-Schmidt with one re-orthogonalization pass per column."""
    a = rng.standard_normal((d, c))
    q = np.zeros((d, c))
    for j in range(c):
        v = a[:, j].copy()
        for _ in range(2):
            for i in range(j):
                v -= (q[:, i] @ v) * q[:, i]
        q[:, j] = v / np.linalg.norm(v)
    return q


@lru_cache(maxsize=64)
def build_etf(num_categories: int, dim: int, seed: int = 0) -> EtfPrototypes:
    """Construct a simplex ETF of ``num_categories`` unit columns in ``dim`` dimensions.

    P = sqrt(C/(C-1)) * U (I_C - 11^T/C) with U a seeded orthonormal d x C frame.

    Args:
        num_categories: Category count C (>= 2)
        dim: Embedding dimension d (>= C)
        seed: Seed of the frame U

    Returns:
        Immutable EtfPrototypes; identical arguments give a bitwise-identical matrix
    """
    if num_categories < 2:
        raise DegenerateCategoryCountError(f"a simplex ETF needs C >= 2, got {num_categories}")
    if dim < num_categories:
        raise DimensionTooSmallError(f"prototype dimension d={dim} is smaller than C={num_categories}")

    rng = np.random.default_rng(seed)
    u = _orthonormal_frame(dim, num_categories, rng)
    centering = np.eye(num_categories) - np.full((num_categories, num_categories), 1.0 / num_categories)
    matrix = np.sqrt(num_categories / (num_categories - 1)) * (u @ centering)
    matrix = matrix / np.linalg.norm(matrix, axis=0, keepdims=True)
    logger.debug(f"Built simplex ETF C={num_categories} d={dim} seed={seed}")
    return EtfPrototypes(matrix=matrix, seed=seed)


def verify_etf(prototypes: EtfPrototypes | np.ndarray, tol: float = ETF_DEFAULT_TOL) -> EtfVerification:
    """Check unit diagonal and -1/(C-1) off-diagonal entries of the Gram matrix."""
    matrix = prototypes.matrix if isinstance(prototypes, EtfPrototypes) else np.asarray(prototypes, dtype=np.float64)
    c = matrix.shape[1]
    gram = matrix.T @ matrix
    diag_dev = float(np.max(np.abs(np.diag(gram) - 1.0)))
    if c > 1:
        off = gram[~np.eye(c, dtype=bool)]
        offdiag_dev = float(np.max(np.abs(off + 1.0 / (c - 1))))
    else:
        offdiag_dev = 0.0
    passed = diag_dev <= tol and offdiag_dev <= tol
    return EtfVerification(passed=passed, diag_deviation=diag_dev, offdiag_deviation=offdiag_dev, tol=tol)


def power_iteration(matrix: np.ndarray, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if not np.any(matrix):
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(matrix.shape[0])
    v /= np.linalg.norm(v)
    estimate = float(v @ matrix @ v)
    for _ in range(POWER_ITERATION_MAX_STEPS):
        w = matrix @ v
        norm = np.linalg.norm(w)
        if norm <= _ZERO_NORM:
            return 0.0
        v = w / norm
        updated = float(v @ matrix @ v)
        if abs(updated - estimate) <= POWER_ITERATION_RTOL * max(abs(updated), _ZERO_NORM):
            return max(updated, 0.0)
        estimate = updated
    logger.debug("Power iteration hit the step cap")
    return max(estimate, 0.0)


def _require_samples(features: FeatureSet) -> None:
    for c in features.categories:
        count = len(features.features[c])
        if count < 2:
            raise InsufficientSamplesError(
                f"category {c} of {features.modality} has {count} feature(s); at least 2 are needed"
            )


def intra_concentration(features: FeatureSet, seed: int = 0) -> float:
    """eta: max over categories of the top eigenvalue of the within-category covariance."""
    _require_samples(features)
    eta = 0.0
    for c in features.categories:
        x = np.asarray(features.features[c], dtype=np.float64)
        centered = x - x.mean(axis=0, keepdims=True)
        covariance = centered.T @ centered / len(x)
        eta = max(eta, power_iteration(covariance, seed=seed))
    return eta


def centered_category_means(means: np.ndarray) -> np.ndarray:
    """Subtract the global mean from each row, then normalize the rows."""
    means = np.asarray(means, dtype=np.float64)
    return _normalize_rows(means - means.mean(axis=0, keepdims=True))


def equiangular_deviation(
    category_means: np.ndarray,
    reference: EtfPrototypes | None = None,
) -> tuple[float, np.ndarray]:
    """Deviation of the means' pairwise inner products from the simplex value -1/(n-1).

    ``category_means`` holds one (centered, normalized) mean per row. The target
    uses the number of rows n: centered means of any n columns of a simplex ETF
    are themselves an n-point simplex, so partially seen category sets keep a
    zero-deviation target.

    Returns:
        (epsilon, pairwise deviation matrix with a zero diagonal)
    """
    means = _normalize_rows(np.asarray(category_means, dtype=np.float64))
    n = means.shape[0]
    if n < 2:
        raise DegenerateCategoryCountError(f"equiangular deviation needs >= 2 categories, got {n}")
    if reference is not None:
        if means.shape[1] != reference.dim:
            raise ShapeMismatchError(f"means have width {means.shape[1]}, prototypes {reference.dim}")
        if n > reference.num_categories:
            raise CategoryCountMismatchError(f"{n} means for {reference.num_categories} prototypes")
    deviation = means @ means.T + 1.0 / (n - 1)
    np.fill_diagonal(deviation, 0.0)
    return float(np.max(np.abs(deviation))), deviation


def cross_modal_discrepancy(text_means: np.ndarray, video_means: np.ndarray) -> tuple[float, np.ndarray]:
    """gamma = max_c (1 - <text mean, video mean>) and the per-category deltas."""
    text_means = np.asarray(text_means, dtype=np.float64)
    video_means = np.asarray(video_means, dtype=np.float64)
    if text_means.shape != video_means.shape:
        raise CategoryCountMismatchError(
            f"text means {text_means.shape} and video means {video_means.shape} do not pair up"
        )
    cosines = np.sum(_normalize_rows(text_means) * _normalize_rows(video_means), axis=-1)
    deltas = np.clip(1.0 - cosines, 0.0, 2.0)
    return float(np.max(deltas)), deltas


def micd(features: FeatureSet) -> float:
    """Mean intra-category dispersion: average pairwise (1 - cosine), averaged over categories."""
    _require_samples(features)
    if not features.categories:
        return 0.0
    per_category = []
    for c in features.categories:
        x = _normalize_rows(np.asarray(features.features[c], dtype=np.float64))
        cos = x @ x.T
        upper = np.triu_indices(len(x), k=1)
        per_category.append(float(np.mean(1.0 - cos[upper])))
    return float(np.clip(np.mean(per_category), 0.0, 2.0))


def _stack_means(means: Mapping[int, np.ndarray], categories: tuple[int, ...]) -> np.ndarray:
    return np.stack([means[c] for c in categories])


def prototype_similarity(means: Mapping[int, np.ndarray]) -> tuple[tuple[int, ...], np.ndarray]:
    """Cosine matrix of the centered, normalized category means."""
    categories = tuple(sorted(means))
    if len(categories) < 2:
        return categories, np.ones((len(categories), len(categories)))
    centered = centered_category_means(_stack_means(means, categories))
    return categories, centered @ centered.T


def geometry_report(
    text: FeatureSet,
    video: FeatureSet,
    reference: EtfPrototypes | None = None,
    seed: int = 0,
) -> GeometryReport:
    """All diagnostics for paired text/video feature sets over the same categories."""
    if text.categories != video.categories:
        raise CategoryCountMismatchError(
            f"text categories {text.categories} differ from video categories {video.categories}"
        )
    categories = text.categories
    text, video = text.normalized(), video.normalized()
    text_means, video_means = text.means(), video.means()

    eta = max(intra_concentration(text, seed=seed), intra_concentration(video, seed=seed))
    if len(categories) >= 2:
        epsilon = max(
            equiangular_deviation(centered_category_means(_stack_means(m, categories)), reference)[0]
            for m in (text_means, video_means)
        )
    else:
        epsilon = 0.0
    gamma, deltas = cross_modal_discrepancy(
        _stack_means(text_means, categories), _stack_means(video_means, categories)
    )
    micd_value = 0.5 * (micd(text) + micd(video))
    return GeometryReport(
        eta=eta,
        epsilon=epsilon,
        gamma=gamma,
        micd=micd_value,
        categories=categories,
        per_category_delta=tuple(float(d) for d in deltas),
    )
