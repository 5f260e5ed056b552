"""Frame-word similarity kernel and batched text-video similarity matrices."""
import logging
from dataclasses import dataclass

import numpy as np

from structalign.diffmath import Tensor, as_tensor, l2_normalize
from structalign.encoders import encode_text, encode_video
from structalign.exceptions import BatchSizeMismatchError, EmptySequenceError, ShapeMismatchError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimilarityMatrix:
    """S[i, j] = sim(text i, video j) under the model identified by ``model_tag``."""

    values: np.ndarray
    model_tag: str

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def rows(self) -> list[dict]:
        """One record per query row (row i = query i)."""
        return [
            {"query": i, **{f"v{j}": float(x) for j, x in enumerate(row)}}
            for i, row in enumerate(self.values)
        ]


def _as_sequence_batch(features, label: str) -> Tensor:
    x = as_tensor(features)
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3:
        raise ShapeMismatchError(f"{label} features must be (L, d) or (B, L, d), got {x.shape}")
    if x.shape[1] == 0:
        raise EmptySequenceError(f"{label} sequence is empty")
    return x


def pairwise_frame_word_sim(words, frames) -> Tensor:
    """Frame-word similarity for every (text, video) combination.

    Args:
        words: (B, N, d) word features
        frames: (G, M, d) frame features

    Returns:
        (B, G) tensor; entry [b, g] = 1/2 [mean_n max_m cos + mean_m max_n cos]
    """
    words = _as_sequence_batch(words, "word")
    frames = _as_sequence_batch(frames, "frame")
    if words.shape[-1] != frames.shape[-1]:
        raise ShapeMismatchError(f"word width {words.shape[-1]} differs from frame width {frames.shape[-1]}")
    w = l2_normalize(words, axis=-1)
    f = l2_normalize(frames, axis=-1)
    b, n, d = w.shape
    g, m, _ = f.shape
    # (B, 1, N, d) @ (1, G, d, M) -> (B, G, N, M)
    cos = w.reshape(b, 1, n, d) @ f.reshape(1, g, m, d).swapaxes(-1, -2)
    word_to_frame = cos.max(axis=-1).mean(axis=-1)
    frame_to_word = cos.max(axis=-2).mean(axis=-1)
    return 0.5 * (word_to_frame + frame_to_word)


def frame_word_sim(word_feats, frame_feats) -> float:
    """Similarity of one text (N x d word features) and one video (M x d frame features)."""
    return pairwise_frame_word_sim(word_feats, frame_feats).item()


def similarity_tensor(texts, videos, state) -> Tensor:
    """Encode both sides under ``state`` and score every text against every video."""
    return pairwise_frame_word_sim(encode_text(texts, state.text), encode_video(videos, state.video))


def sim_matrix(texts, videos, state, model_tag: str = "current") -> SimilarityMatrix:
    """Exact B x B similarity matrix of a paired batch under one model snapshot."""
    texts, videos = np.asarray(texts), np.asarray(videos)
    if len(texts) != len(videos):
        raise BatchSizeMismatchError(f"{len(texts)} texts but {len(videos)} videos")
    if len(texts) == 0:
        raise EmptySequenceError("similarity matrix of an empty batch")
    values = similarity_tensor(texts, videos, state).numpy()
    return SimilarityMatrix(values=values, model_tag=model_tag)
