"""Retrieval evaluation and geometry diagnostics after each task."""
import logging
from dataclasses import dataclass, field

import numpy as np

from structalign.config import ExperimentConfig
from structalign.encoders import encode_text, encode_video
from structalign.etf_geometry import (
    EtfPrototypes,
    FeatureSet,
    GeometryReport,
    geometry_report,
    prototype_similarity,
)
from structalign.exceptions import InsufficientSamplesError
from structalign.harness.stream import PairSet, TaskStream
from structalign.harness.training import category_means
from structalign.losses import pool_batch
from structalign.metrics import MetricsReport, RankList, rank_from_similarity
from structalign.model import ModelState
from structalign.similarity import pairwise_frame_word_sim

logger = logging.getLogger(__name__)


@dataclass
class StepRecord:
    """Everything measured after training task ``after_task``."""

    after_task: int
    overall: MetricsReport
    per_task: list[MetricsReport]
    geometry: GeometryReport | None
    prototype_similarity: dict[str, tuple[tuple[int, ...], np.ndarray]] = field(default_factory=dict)
    similarity: np.ndarray | None = None


def _grouped(vectors: np.ndarray, categories: np.ndarray, modality: str) -> FeatureSet:
    return FeatureSet(
        modality=modality,
        features={int(c): vectors[categories == c] for c in np.unique(categories)},
    )


class EvaluationMixin:
    """Mixin for scoring the current model on every test set seen so far."""

    config: ExperimentConfig
    stream: TaskStream
    state: ModelState
    prototypes: EtfPrototypes

    def evaluate(self, k: int) -> StepRecord:
        """Retrieval over the union gallery plus per-task galleries and geometry diagnostics.

        Queries are all seen test texts and the gallery all seen test videos.
        Per-task metrics restrict both sides to one task's test pairs.
        """
        seen = self.stream.tasks[:k]
        test = PairSet.concat([task.test for task in seen])
        words = encode_text(test.texts, self.state.text)
        frames = encode_video(test.videos, self.state.video)
        similarity = pairwise_frame_word_sim(words, frames).value

        truth = np.arange(len(test))
        overall = MetricsReport.from_ranks(
            RankList(ranks=rank_from_similarity(similarity, truth), gallery_size=len(test))
        )

        per_task = []
        start = 0
        for task in seen:
            stop = start + len(task.test)
            block = similarity[start:stop, start:stop]
            ranks = rank_from_similarity(block, np.arange(stop - start))
            per_task.append(MetricsReport.from_ranks(RankList(ranks=ranks, gallery_size=stop - start)))
            start = stop

        pooled = pool_batch(words, frames, test.categories, self.state, self.prototypes)
        w_bar, f_bar = pooled.w_bar.value, pooled.f_bar.value
        try:
            geometry = geometry_report(
                _grouped(w_bar, test.categories, "text"),
                _grouped(f_bar, test.categories, "video"),
                reference=self.prototypes,
                seed=self.config.seed,
            )
        except InsufficientSamplesError as e:
            logger.warning(f"Geometry diagnostics skipped after task {k}: {e}")
            geometry = None

        text_means, video_means = category_means(w_bar, f_bar, test.categories)
        record = StepRecord(
            after_task=k,
            overall=overall,
            per_task=per_task,
            geometry=geometry,
            prototype_similarity={
                "text": prototype_similarity(text_means),
                "video": prototype_similarity(video_means),
                "etf": prototype_similarity({c: self.prototypes.column(c) for c in text_means}),
            },
            similarity=similarity,
        )
        logger.info(
            f"After task {k}: R@1 {overall.r1:.2f} R@5 {overall.r5:.2f} R@10 {overall.r10:.2f} "
            f"MedR {overall.medr:.1f} MeanR {overall.meanr:.2f}"
        )
        return record
