"""Training objectives: contrastive, ETF alignment, relation preserving, and their composite."""
import logging
from dataclasses import dataclass
from typing import Any

import numpy as np

from structalign.config import LossConfig
from structalign.diffmath import Tensor, as_tensor, concatenate, l2_normalize, log_softmax, reduce_sum, softmax
from structalign.diffmath.tensor import log_softmax_values
from structalign.encoders import encode_text, encode_video, project_to_prototype_space
from structalign.etf_geometry import EtfPrototypes
from structalign.exceptions import (
    ContinualProtocolError,
    EmptySequenceError,
    MissingSnapshotError,
    NonPositiveTemperatureError,
    ShapeMismatchError,
    UnknownCategoryError,
)
from structalign.similarity import pairwise_frame_word_sim

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PooledPair:
    w_bar: np.ndarray
    f_bar: np.ndarray
    category: int


@dataclass(frozen=True)
class PooledPairs:
    """A batch of pooled text/video vectors, row-aligned with their category labels."""

    w_bar: Tensor
    f_bar: Tensor
    categories: np.ndarray

    def __len__(self) -> int:
        return len(self.categories)

    def __getitem__(self, i: int) -> PooledPair:
        return PooledPair(self.w_bar.value[i], self.f_bar.value[i], int(self.categories[i]))

    @classmethod
    def from_pairs(cls, pairs: list[PooledPair]) -> "PooledPairs":
        return cls(
            w_bar=Tensor(np.stack([p.w_bar for p in pairs])),
            f_bar=Tensor(np.stack([p.f_bar for p in pairs])),
            categories=np.array([p.category for p in pairs], dtype=np.int64),
        )

    def concat(self, other: "PooledPairs") -> "PooledPairs":
        if len(other) == 0:
            return self
        if len(self) == 0:
            return other
        return PooledPairs(
            w_bar=concatenate([self.w_bar, other.w_bar], axis=0),
            f_bar=concatenate([self.f_bar, other.f_bar], axis=0),
            categories=np.concatenate([self.categories, other.categories]),
        )


@dataclass(frozen=True)
class LossBreakdown:
    total: Tensor
    scl: float
    etf: float
    crp: float

    def as_row(self) -> dict[str, float]:
        return {"scl": self.scl, "etf": self.etf, "crp": self.crp, "total": self.total.item()}


def attention_pool(projected, prototype) -> Tensor:
    """Prototype-guided pooling: softmax(<v_n, p_c>) weighted sum of the sequence.

    Args:
        projected: (N, d) sequence or (B, N, d) batch of sequences
        prototype: (d,) prototype, or (B, d) one per sequence
    """
    x = as_tensor(projected)
    p = np.asarray(prototype, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x.reshape(1, *x.shape)
        p = p.reshape(1, -1)
    if x.shape[1] == 0:
        raise EmptySequenceError("attention pooling over an empty sequence")
    if p.shape != (x.shape[0], x.shape[2]):
        raise ShapeMismatchError(f"prototypes {p.shape} do not match sequences {x.shape}")
    scores = reduce_sum(x * p[:, None, :], axis=-1)
    alpha = softmax(scores, temperature=1.0, axis=-1)
    pooled = reduce_sum(alpha.reshape(*alpha.shape, 1) * x, axis=1)
    return pooled.reshape(x.shape[2]) if single else pooled


def _prototype_rows(categories: np.ndarray, prototypes: EtfPrototypes) -> np.ndarray:
    categories = np.asarray(categories, dtype=np.int64)
    unknown = sorted({int(c) for c in categories if not 0 <= c < prototypes.num_categories})
    if unknown:
        raise UnknownCategoryError(f"no prototype for categories {unknown}")
    return prototypes.matrix[:, categories].T


def etf_alignment_loss(batch: PooledPairs, prototypes: EtfPrototypes) -> Tensor:
    """Mean over the batch of (1 - <w_hat, p_c>) + (1 - <f_hat, p_c>)."""
    if len(batch) == 0:
        raise EmptySequenceError("ETF alignment loss of an empty batch")
    targets = _prototype_rows(batch.categories, prototypes)
    w_hat = l2_normalize(batch.w_bar, axis=-1)
    f_hat = l2_normalize(batch.f_bar, axis=-1)
    per_pair = (1.0 - reduce_sum(w_hat * targets, axis=-1)) + (1.0 - reduce_sum(f_hat * targets, axis=-1))
    return per_pair.mean()


def synth_pseudo_features(
    text_means: dict[int, np.ndarray],
    video_means: dict[int, np.ndarray],
    sigma: float,
    count: int,
    rng: np.random.Generator | int | Any = None,
) -> PooledPairs:
    """``count`` noisy copies of each stored category mean per modality.

    Every coordinate gets independent N(0, sigma^2) noise. The result is not
    normalized; etf_alignment_loss normalizes what it consumes.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    categories = sorted(text_means)
    if sorted(video_means) != categories:
        raise ContinualProtocolError("text and video means cover different categories")
    if not categories or count == 0:
        return PooledPairs(Tensor(np.zeros((0, 0))), Tensor(np.zeros((0, 0))), np.zeros(0, dtype=np.int64))
    w_rows, f_rows, labels = [], [], []
    for c in categories:
        t_mean = np.asarray(text_means[c], dtype=np.float64)
        v_mean = np.asarray(video_means[c], dtype=np.float64)
        w_rows.append(t_mean + sigma * rng.standard_normal((count, t_mean.size)))
        f_rows.append(v_mean + sigma * rng.standard_normal((count, v_mean.size)))
        labels.extend([c] * count)
    return PooledPairs(
        w_bar=Tensor(np.concatenate(w_rows)),
        f_bar=Tensor(np.concatenate(f_rows)),
        categories=np.array(labels, dtype=np.int64),
    )


def _kl_rows(s_prev: np.ndarray, s_curr: Tensor, tau2: float, axis: int) -> Tensor:
    """KL(softmax(prev/tau2) || softmax(curr/tau2)) along ``axis``, one value per slice."""
    log_p = log_softmax_values(s_prev / tau2, axis=axis)
    p = np.exp(log_p)
    entropy_term = np.sum(p * log_p, axis=axis)
    cross_term = reduce_sum(p * log_softmax(s_curr, temperature=tau2, axis=axis), axis=axis)
    return entropy_term - cross_term


def crp_loss(s_curr, s_prev, tau2: float = 1.0, symmetric: bool = True) -> Tensor:
    """Relation preserving loss between current and previous similarity matrices.

    ``s_prev`` is a constant anchor. Row-wise (text-as-query) KL is averaged
    over the batch; with ``symmetric`` the column-wise term is averaged in.
    """
    if not tau2 > 0:
        raise NonPositiveTemperatureError(f"tau2 must be > 0, got {tau2}")
    s_curr = as_tensor(s_curr.values if hasattr(s_curr, "model_tag") else s_curr)
    s_prev = np.asarray(s_prev.values if hasattr(s_prev, "model_tag") else s_prev, dtype=np.float64)
    if s_curr.shape != s_prev.shape or s_curr.ndim != 2:
        raise ShapeMismatchError(f"similarity matrices differ: {s_curr.shape} vs {s_prev.shape}")
    rows = _kl_rows(s_prev, s_curr, tau2, axis=1).mean()
    if not symmetric:
        return rows
    cols = _kl_rows(s_prev, s_curr, tau2, axis=0).mean()
    return 0.5 * (rows + cols)


def scl_loss(s, tau: float = 0.07) -> Tensor:
    """Symmetric InfoNCE over a square similarity matrix whose diagonal holds the matched pairs."""
    if not tau > 0:
        raise NonPositiveTemperatureError(f"tau must be > 0, got {tau}")
    s = as_tensor(s.values if hasattr(s, "model_tag") else s)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeMismatchError(f"scl_loss needs a square matrix, got {s.shape}")
    eye = np.eye(s.shape[0])
    t2v = -reduce_sum(log_softmax(s, temperature=tau, axis=1) * eye) / s.shape[0]
    v2t = -reduce_sum(log_softmax(s, temperature=tau, axis=0) * eye) / s.shape[0]
    return 0.5 * (t2v + v2t)


def pool_batch(words: Tensor, frames: Tensor, categories: np.ndarray, state, prototypes: EtfPrototypes) -> PooledPairs:
    """Project encoder features with g_t, g_v and pool each sequence toward its category prototype."""
    targets = _prototype_rows(categories, prototypes)
    w_tilde = project_to_prototype_space(words, state.heads.text)
    f_tilde = project_to_prototype_space(frames, state.heads.video)
    return PooledPairs(
        w_bar=attention_pool(w_tilde, targets),
        f_bar=attention_pool(f_tilde, targets),
        categories=np.asarray(categories, dtype=np.int64),
    )


def total_loss(
    batch,
    state,
    prev,
    prototypes: EtfPrototypes,
    config: LossConfig,
    task_index: int,
    rng: np.random.Generator | int | None = None,
) -> LossBreakdown:
    """Composite objective for one mini-batch of task ``task_index`` (1-based).

    k = 1: L_SCL + lambda1 * L_ETF on real pairs.
    k > 1: adds lambda2 * L_CRP against ``prev`` and extends L_ETF with pseudo
    features of every category whose means are stored in ``state``.

    Args:
        batch: PairSet-like object with texts, videos, categories
        state: Current ModelState
        prev: Snapshot of the model at the end of the previous task, or None
        prototypes: Fixed simplex ETF
        config: Loss weights and temperatures
        task_index: 1-based task number
        rng: Generator for pseudo-feature noise

    Returns:
        LossBreakdown with the differentiable total and float components
    """
    if task_index > 1 and prev is None:
        raise MissingSnapshotError(f"task {task_index} needs the previous model snapshot")
    if task_index <= 1 and prev is not None:
        raise ContinualProtocolError("the first task must not receive a previous snapshot")

    words = encode_text(batch.texts, state.text)
    frames = encode_video(batch.videos, state.video)
    s_curr = pairwise_frame_word_sim(words, frames)
    scl = scl_loss(s_curr, config.tau)

    pooled = pool_batch(words, frames, batch.categories, state, prototypes)
    if task_index > 1:
        pseudo = synth_pseudo_features(
            state.text_means, state.video_means, config.sigma, config.pseudo_per_category, rng
        )
        pooled = pooled.concat(pseudo)
    etf = etf_alignment_loss(pooled, prototypes)
    total = scl + config.lambda1 * etf

    crp_value = 0.0
    if task_index > 1:
        s_prev = pairwise_frame_word_sim(
            encode_text(batch.texts, prev.text), encode_video(batch.videos, prev.video)
        ).value
        crp = crp_loss(s_curr, s_prev, config.tau2, symmetric=config.crp_symmetric)
        total = total + config.lambda2 * crp
        crp_value = crp.item()

    return LossBreakdown(total=total, scl=scl.item(), etf=etf.item(), crp=crp_value)

