"""Synthetic task streams, the continual training loop, and experiment orchestration."""
from structalign.harness.evaluation import EvaluationMixin, StepRecord
from structalign.harness.experiment import (
    ContinualLearner,
    ExperimentResult,
    SweepCell,
    run_ablation,
    run_continual,
    run_sweep,
)
from structalign.harness.optim import Adam
from structalign.harness.stream import PairSet, TaskDataset, TaskStream, generate_task_stream, merge_stream, task_maps
from structalign.harness.training import StepLog, TrainingMixin, category_means
from structalign.model import snapshot

__all__ = [
    "Adam",
    "ContinualLearner",
    "EvaluationMixin",
    "ExperimentResult",
    "PairSet",
    "StepLog",
    "StepRecord",
    "SweepCell",
    "TaskDataset",
    "TaskStream",
    "TrainingMixin",
    "category_means",
    "generate_task_stream",
    "merge_stream",
    "run_ablation",
    "run_continual",
    "run_sweep",
    "snapshot",
    "task_maps",
]
