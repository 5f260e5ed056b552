"""Synthetic continual task stream with disjoint per-task category sets."""
import logging
from dataclasses import dataclass, field

import numpy as np

from structalign.config import ExperimentConfig
from structalign.exceptions import DataLeakError
from structalign.model import SEED_STREAM_DATA, SEED_STREAM_TASK_SHIFT

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairSet:
    """Paired raw inputs: texts (P, N, D), videos (P, M, D), categories (P,), pair ids (P,)."""

    texts: np.ndarray
    videos: np.ndarray
    categories: np.ndarray
    pair_ids: np.ndarray

    def __post_init__(self):
        for array in (self.texts, self.videos, self.categories, self.pair_ids):
            array.setflags(write=False)

    def __len__(self) -> int:
        return len(self.categories)

    def subset(self, index: np.ndarray) -> "PairSet":
        return PairSet(
            texts=self.texts[index],
            videos=self.videos[index],
            categories=self.categories[index],
            pair_ids=self.pair_ids[index],
        )

    @classmethod
    def concat(cls, parts: list["PairSet"]) -> "PairSet":
        return cls(
            texts=np.concatenate([p.texts for p in parts]),
            videos=np.concatenate([p.videos for p in parts]),
            categories=np.concatenate([p.categories for p in parts]),
            pair_ids=np.concatenate([p.pair_ids for p in parts]),
        )


@dataclass(frozen=True)
class TaskDataset:
    index: int
    categories: tuple[int, ...]
    train: PairSet
    test: PairSet
    shots: int

    def assert_isolated(self, pairs: PairSet) -> None:
        """Raise DataLeakError when any pair falls outside this task's category set."""
        foreign = sorted(set(int(c) for c in pairs.categories) - set(self.categories))
        if foreign:
            raise DataLeakError(
                f"task {self.index} touched pairs of categories {foreign} outside {list(self.categories)}",
                categories=foreign,
            )


@dataclass(frozen=True)
class TaskStream:
    tasks: tuple[TaskDataset, ...]
    num_categories: int
    seed: int
    metadata: dict = field(default_factory=dict)

    @property
    def k_tasks(self) -> int:
        return len(self.tasks)

    def seen_categories(self, k: int) -> tuple[int, ...]:
        """Union of the category sets of tasks 1..k."""
        return tuple(sorted(c for task in self.tasks[:k] for c in task.categories))


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _split_latent(config: ExperimentConfig) -> tuple[slice, slice]:
    """Latent coordinates of category directions and of instance offsets."""
    if config.instance_dim == 0:
        whole = slice(0, config.latent_dim)
        return whole, whole
    boundary = config.latent_dim - config.instance_dim
    return slice(0, boundary), slice(boundary, config.latent_dim)


def _sample_pairs(
    rng: np.random.Generator,
    direction: np.ndarray,
    count: int,
    maps: dict[str, np.ndarray],
    config: ExperimentConfig,
) -> tuple[np.ndarray, np.ndarray]:
    _, instance = _split_latent(config)
    offsets = np.zeros((count, config.latent_dim))
    raw = rng.standard_normal((count, instance.stop - instance.start))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    offsets[:, instance] = config.instance_noise * raw / np.where(norms > 0, norms, 1.0)
    codes = direction[None, :] + offsets
    text_base = codes @ maps["text"].T
    video_base = codes @ maps["video"].T
    texts = text_base[:, None, :] + config.token_noise * rng.standard_normal(
        (count, config.n_tokens, config.token_width)
    )
    videos = video_base[:, None, :] + config.frame_noise * rng.standard_normal(
        (count, config.n_frames, config.token_width)
    )
    return texts, videos


def task_maps(config: ExperimentConfig, base: dict[str, np.ndarray], seed: int) -> list[dict[str, np.ndarray]]:
    """Per-task modality maps: the shared base plus an independent shift of each modality.

    The text and video shifts are drawn separately, so a task moves the two
    modalities in unrelated directions.
    """
    rng = np.random.default_rng([seed, SEED_STREAM_TASK_SHIFT])
    width, latent = config.token_width, config.latent_dim
    return [
        {
            modality: base[modality] + config.task_shift * rng.normal(0.0, 1.0 / np.sqrt(latent), (width, latent))
            for modality in ("text", "video")
        }
        for _ in range(config.k_tasks)
    ]


def generate_task_stream(config: ExperimentConfig, seed: int | None = None) -> TaskStream:
    """Build K tasks over disjoint category sets from seeded latent category directions.

    Each category has a latent unit direction u_c. A pair adds an instance offset
    of norm ``instance_noise`` (restricted to the trailing ``instance_dim``
    latent coordinates when that is nonzero, with u_c on the leading ones),
    maps the code through its task's modality map, then adds independent token
    or frame noise per sequence element. The base maps are
    T_m = E + modality_gap * N_m; task k adds ``task_shift`` times its own
    Gaussian map per modality.
    """
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng([seed, SEED_STREAM_DATA])
    total = config.total_categories
    width, latent = config.token_width, config.latent_dim

    embedding, _ = np.linalg.qr(rng.standard_normal((width, latent)))
    maps = {
        modality: embedding + config.modality_gap * rng.normal(0.0, 1.0 / np.sqrt(latent), (width, latent))
        for modality in ("text", "video")
    }
    category_span, _ = _split_latent(config)
    directions = np.zeros((total, latent))
    directions[:, category_span] = _unit_rows(rng.standard_normal((total, category_span.stop - category_span.start)))
    order = rng.permutation(total)
    shifted = task_maps(config, maps, seed)

    tasks = []
    next_id = 0
    for k in range(config.k_tasks):
        categories = tuple(sorted(int(c) for c in order[k * config.cats_per_task:(k + 1) * config.cats_per_task]))
        splits = {}
        for split, count in (("train", config.shots), ("test", config.test_per_category)):
            texts, videos, labels, ids = [], [], [], []
            for c in categories:
                t, v = _sample_pairs(rng, directions[c], count, shifted[k], config)
                texts.append(t)
                videos.append(v)
                labels.extend([c] * count)
                ids.extend(range(next_id, next_id + count))
                next_id += count
            splits[split] = PairSet(
                texts=np.concatenate(texts),
                videos=np.concatenate(videos),
                categories=np.array(labels, dtype=np.int64),
                pair_ids=np.array(ids, dtype=np.int64),
            )
        tasks.append(
            TaskDataset(index=k + 1, categories=categories, train=splits["train"], test=splits["test"], shots=config.shots)
        )
        logger.debug(f"Task {k + 1}: categories {list(categories)}")
    return TaskStream(tasks=tuple(tasks), num_categories=total, seed=seed)


def merge_stream(stream: TaskStream) -> TaskStream:
    """Collapse every task into one jointly trained task."""
    merged = TaskDataset(
        index=1,
        categories=tuple(sorted(c for task in stream.tasks for c in task.categories)),
        train=PairSet.concat([task.train for task in stream.tasks]),
        test=PairSet.concat([task.test for task in stream.tasks]),
        shots=stream.tasks[0].shots,
    )
    return TaskStream(
        tasks=(merged,),
        num_categories=stream.num_categories,
        seed=stream.seed,
        metadata={"merged_from": stream.k_tasks},
    )
