"""Model state: frozen encoder bases, trainable adapters and heads, stored category means."""
import copy
import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from structalign.config import ExperimentConfig
from structalign.diffmath import Tensor
from structalign.encoders import (
    ProjectionHeads,
    TextEncoderState,
    VideoEncoderState,
    init_projection_heads,
    init_text_encoder,
    init_video_encoder,
)
from structalign.exceptions import CheckpointFormatError

logger = logging.getLogger(__name__)

# Seed-stream purpose ids shared by every consumer of ExperimentConfig.seed
SEED_STREAM_DATA = 0
SEED_STREAM_MODEL = 1
SEED_STREAM_SHUFFLE = 2
SEED_STREAM_PSEUDO = 3
SEED_STREAM_PROTOTYPES = 4
SEED_STREAM_TASK_SHIFT = 5


def _digest(tensors: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        value = np.ascontiguousarray(tensors[name], dtype="<f8")
        h.update(name.encode("utf-8"))
        h.update(str(value.shape).encode("ascii"))
        h.update(value.tobytes())
    return h.hexdigest()


@dataclass
class ModelState:
    text: TextEncoderState
    video: VideoEncoderState
    heads: ProjectionHeads
    text_means: dict[int, np.ndarray] = field(default_factory=dict)
    video_means: dict[int, np.ndarray] = field(default_factory=dict)
    read_only: bool = False

    def trainable(self) -> dict[str, Tensor]:
        params = self.text.trainable()
        params.update(self.video.trainable())
        params.update(self.heads.trainable())
        return params

    def frozen(self) -> dict[str, Tensor]:
        params = self.text.frozen()
        params.update(self.video.frozen())
        return params

    def parameters(self) -> dict[str, Tensor]:
        params = self.frozen()
        params.update(self.trainable())
        return params

    def frozen_checksum(self) -> str:
        return _digest({name: t.value for name, t in self.frozen().items()})

    def checksum(self) -> str:
        """Digest of every parameter and every stored category mean."""
        values = {name: t.value for name, t in self.parameters().items()}
        values.update({f"means.text.{c}": v for c, v in self.text_means.items()})
        values.update({f"means.video.{c}": v for c, v in self.video_means.items()})
        return _digest(values)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: np.array(t.value) for name, t in self.parameters().items()}

    def load_state_dict(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(values))
        if missing:
            raise CheckpointFormatError(f"Checkpoint lacks parameter blocks: {', '.join(missing)}")
        for name, tensor in params.items():
            if values[name].shape != tensor.shape:
                raise CheckpointFormatError(
                    f"Parameter {name} has shape {values[name].shape}, expected {tensor.shape}"
                )
            tensor.value = np.array(values[name], dtype=np.float64)


def init_model_state(config: ExperimentConfig) -> ModelState:
    """Seeded initial state; identical configs give bitwise-identical parameters."""
    rng = np.random.default_rng([config.seed, SEED_STREAM_MODEL])
    state = ModelState(
        text=init_text_encoder(
            rng,
            config.token_width,
            layers=config.layers,
            experts=config.experts,
            k_e=config.k_e,
            rank=config.lora_rank,
        ),
        video=init_video_encoder(rng, config.token_width, layers=config.layers, rank=config.lora_rank),
        heads=init_projection_heads(rng, config.token_width, config.proto_dim),
    )
    logger.debug(f"Initialized model with {len(state.trainable())} trainable tensors")
    return state


def snapshot(state: ModelState) -> ModelState:
    """Deep copy with every array made read-only and gradient tracking off."""
    frozen_copy = copy.deepcopy(state)
    for tensor in frozen_copy.parameters().values():
        tensor.requires_grad = False
        tensor.grad = None
        tensor.value.setflags(write=False)
    for means in (frozen_copy.text_means, frozen_copy.video_means):
        for value in means.values():
            value.setflags(write=False)
    frozen_copy.read_only = True
    return frozen_copy
