"""Per-task training loop."""
import logging
from dataclasses import asdict, dataclass

import numpy as np

from structalign.config import ExperimentConfig, LossConfig
from structalign.diffmath import GradientTape, backward, l2_normalize
from structalign.encoders import encode_text, encode_video
from structalign.etf_geometry import EtfPrototypes
from structalign.exceptions import FrozenParameterError, MissingSnapshotError
from structalign.harness.optim import Adam
from structalign.harness.stream import TaskDataset
from structalign.losses import pool_batch, total_loss
from structalign.model import SEED_STREAM_PSEUDO, SEED_STREAM_SHUFFLE, ModelState

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepLog:
    task: int
    epoch: int
    step: int
    scl: float
    etf: float
    crp: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


def category_means(pooled_w: np.ndarray, pooled_f: np.ndarray, categories: np.ndarray) -> tuple[dict, dict]:
    """Normalized average of normalized pooled vectors, per category and modality."""
    w_hat = l2_normalize(pooled_w).value
    f_hat = l2_normalize(pooled_f).value
    text_means, video_means = {}, {}
    for c in sorted(set(int(c) for c in categories)):
        rows = categories == c
        text_means[c] = l2_normalize(w_hat[rows].mean(axis=0)).value
        video_means[c] = l2_normalize(f_hat[rows].mean(axis=0)).value
    return text_means, video_means


class TrainingMixin:
    """Mixin for fitting the model on one task at a time."""

    config: ExperimentConfig
    loss_config: LossConfig
    state: ModelState
    prototypes: EtfPrototypes

    def learning_rate(self, task_index: int) -> float:
        return self.config.lr_base if task_index == 1 else self.config.lr_incr

    def train_task(self, task: TaskDataset, prev: ModelState | None, lr: float | None = None) -> list[StepLog]:
        """Optimize the composite loss on ``task`` only, then store its category means.

        Args:
            task: Current task; every batch is checked against its category set
            prev: Snapshot taken at the end of the previous task (None for task 1)
            lr: Override of the configured learning rate

        Returns:
            One StepLog per optimizer step
        """
        k = task.index
        if k > 1 and prev is None:
            raise MissingSnapshotError(f"task {k} needs the snapshot of task {k - 1}")
        task.assert_isolated(task.train)

        optimizer = Adam(lr=self.learning_rate(k) if lr is None else lr)
        frozen_before = self.state.frozen_checksum()
        logger.info(f"Training task {k} on categories {list(task.categories)} ({len(task.train)} pairs)")

        logs: list[StepLog] = []
        step = 0
        for epoch in range(self.config.epochs):
            order = np.random.default_rng([self.config.seed, SEED_STREAM_SHUFFLE, k, epoch]).permutation(len(task.train))
            pseudo_rng = np.random.default_rng([self.config.seed, SEED_STREAM_PSEUDO, k, epoch])
            for start in range(0, len(order), self.config.batch):
                batch = task.train.subset(order[start:start + self.config.batch])
                task.assert_isolated(batch)
                params = self.state.trainable()
                with GradientTape() as tape:
                    tape.watch(params)
                    breakdown = total_loss(
                        batch, self.state, prev, self.prototypes, self.loss_config, k, rng=pseudo_rng
                    )
                grads = backward(breakdown.total, tape)
                optimizer.step(params, grads)
                logs.append(StepLog(task=k, epoch=epoch, step=step, **breakdown.as_row()))
                step += 1
            epoch_logs = [log.total for log in logs if log.epoch == epoch]
            logger.debug(f"Task {k} epoch {epoch}: mean loss {np.mean(epoch_logs):.6f}")

        if self.state.frozen_checksum() != frozen_before:
            raise FrozenParameterError(f"frozen encoder weights changed while training task {k}")

        self.update_category_means(task)
        return logs

    def update_category_means(self, task: TaskDataset) -> None:
        """End-of-task pass over the training pairs storing per-category modality means."""
        words = encode_text(task.train.texts, self.state.text)
        frames = encode_video(task.train.videos, self.state.video)
        pooled = pool_batch(words, frames, task.train.categories, self.state, self.prototypes)
        text_means, video_means = category_means(pooled.w_bar.value, pooled.f_bar.value, task.train.categories)
        self.state.text_means.update(text_means)
        self.state.video_means.update(video_means)
