"""Retrieval and continual-learning metrics."""
import logging
from dataclasses import dataclass

import numpy as np

from structalign.exceptions import (
    EmptyRankListError,
    InsufficientTasksError,
    ShapeMismatchError,
    TruthNotInGalleryError,
)
from structalign.similarity import pairwise_frame_word_sim, similarity_tensor

logger = logging.getLogger(__name__)

RECALL_CUTOFFS = (1, 5, 10)


@dataclass(frozen=True)
class RankList:
    """1-based rank of each query's ground-truth video within the gallery."""

    ranks: np.ndarray
    gallery_size: int

    def __post_init__(self):
        ranks = np.asarray(self.ranks, dtype=np.int64)
        if ranks.size and (ranks.min() < 1 or ranks.max() > self.gallery_size):
            raise ValueError(f"ranks must lie in [1, {self.gallery_size}]")
        object.__setattr__(self, "ranks", ranks)

    def __len__(self) -> int:
        return len(self.ranks)


def rank_from_similarity(similarity: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Rank of truth[i] in row i sorted by descending similarity, ties to the lower gallery index."""
    similarity = np.asarray(similarity, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if similarity.ndim != 2 or len(truth) != similarity.shape[0]:
        raise ShapeMismatchError(f"similarity {similarity.shape} does not match {len(truth)} truths")
    gallery = similarity.shape[1]
    if truth.size and (truth.min() < 0 or truth.max() >= gallery):
        raise TruthNotInGalleryError(f"truth indices must lie in [0, {gallery - 1}]")
    target = similarity[np.arange(len(truth)), truth][:, None]
    index = np.arange(gallery)[None, :]
    ahead = (similarity > target) | ((similarity == target) & (index < truth[:, None]))
    return ahead.sum(axis=1) + 1


def rank_queries(queries, gallery, truth, state=None) -> RankList:
    """Rank every query's true video among the gallery by frame-word similarity.

    Args:
        queries: (Q, N, D) raw texts, or (Q, N, d) word features when ``state`` is None
        gallery: (G, M, D) raw videos, or (G, M, d) frame features when ``state`` is None
        truth: length-Q gallery index of each query's video
        state: Model used to encode the raw inputs

    Returns:
        RankList over the Q queries
    """
    truth = np.asarray(truth, dtype=np.int64)
    gallery_size = len(gallery)
    if truth.size and (truth.min() < 0 or truth.max() >= gallery_size):
        raise TruthNotInGalleryError(f"truth indices must lie in [0, {gallery_size - 1}]")
    if state is None:
        similarity = pairwise_frame_word_sim(queries, gallery).value
    else:
        similarity = similarity_tensor(queries, gallery, state).value
    return RankList(ranks=rank_from_similarity(similarity, truth), gallery_size=gallery_size)


def _require_ranks(ranks: RankList | np.ndarray) -> np.ndarray:
    values = np.asarray(ranks.ranks if isinstance(ranks, RankList) else ranks, dtype=np.float64)
    if values.size == 0:
        raise EmptyRankListError("no ranks to summarize")
    return values


def recall_at_k(ranks: RankList | np.ndarray, k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    values = _require_ranks(ranks)
    return 100.0 * float(np.mean(values <= k))


def median_rank(ranks: RankList | np.ndarray) -> float:
    return float(np.median(_require_ranks(ranks)))


def mean_rank(ranks: RankList | np.ndarray) -> float:
    return float(np.mean(_require_ranks(ranks)))


def bwf(recall_matrix: np.ndarray, k: int) -> float:
    """Average R@1 drop on tasks 1..k-1 after learning task k (k is 1-based)."""
    if k < 2:
        raise InsufficientTasksError(f"backward forgetting needs k >= 2, got {k}")
    r = np.asarray(recall_matrix, dtype=np.float64)
    drops = [r[i, i] - r[k - 1, i] for i in range(k - 1)]
    return float(np.mean(drops))


@dataclass(frozen=True)
class MetricsReport:
    r1: float
    r5: float
    r10: float
    medr: float
    meanr: float
    queries: int

    @classmethod
    def from_ranks(cls, ranks: RankList) -> "MetricsReport":
        r1, r5, r10 = (recall_at_k(ranks, k) for k in RECALL_CUTOFFS)
        return cls(
            r1=r1,
            r5=r5,
            r10=r10,
            medr=median_rank(ranks),
            meanr=mean_rank(ranks),
            queries=len(ranks),
        )

    def to_dict(self) -> dict[str, float]:
        return {"r1": self.r1, "r5": self.r5, "r10": self.r10, "medr": self.medr, "meanr": self.meanr}
