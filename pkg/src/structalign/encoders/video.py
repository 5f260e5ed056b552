"""Video encoder: frozen self-attention layers with low-rank query/value adapters."""
from dataclasses import dataclass, field

import numpy as np

from structalign.diffmath import Tensor, as_tensor
from structalign.diffmath.tensor import softmax_op, softmax_values
from structalign.exceptions import EmptySequenceError, ShapeMismatchError


@dataclass
class VideoLayer:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    a_q: Tensor
    b_q: Tensor
    a_v: Tensor
    b_v: Tensor

    @property
    def width(self) -> int:
        return self.w_q.shape[0]

    @property
    def rank(self) -> int:
        return self.a_q.shape[1]

    def frozen(self) -> dict[str, Tensor]:
        return {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v}

    def trainable(self) -> dict[str, Tensor]:
        return {"a_q": self.a_q, "b_q": self.b_q, "a_v": self.a_v, "b_v": self.b_v}

    def delta_q(self) -> np.ndarray:
        return self.a_q.value @ self.b_q.value

    def delta_v(self) -> np.ndarray:
        return self.a_v.value @ self.b_v.value


@dataclass
class VideoEncoderState:
    layers: list[VideoLayer] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.layers[0].width

    def frozen(self) -> dict[str, Tensor]:
        return {f"video.{l}.{k}": v for l, layer in enumerate(self.layers) for k, v in layer.frozen().items()}

    def trainable(self) -> dict[str, Tensor]:
        return {f"video.{l}.{k}": v for l, layer in enumerate(self.layers) for k, v in layer.trainable().items()}


def init_video_encoder(rng: np.random.Generator, width: int, layers: int = 2, rank: int = 4) -> VideoEncoderState:
    """Random frozen projections; A factors small random, B factors zero."""
    if not 1 <= rank <= width // 2:
        raise ShapeMismatchError(f"LoRA rank {rank} must lie in [1, {width // 2}]")
    scale = 1.0 / np.sqrt(width)
    state = VideoEncoderState()
    for _ in range(layers):
        state.layers.append(
            VideoLayer(
                w_q=Tensor(rng.normal(0.0, scale, (width, width))),
                w_k=Tensor(rng.normal(0.0, scale, (width, width))),
                w_v=Tensor(rng.normal(0.0, scale, (width, width))),
                a_q=Tensor(rng.normal(0.0, scale, (width, rank))),
                b_q=Tensor(np.zeros((rank, width))),
                a_v=Tensor(rng.normal(0.0, scale, (width, rank))),
                b_v=Tensor(np.zeros((rank, width))),
            )
        )
    return state


def _check_width(x: Tensor, width: int) -> None:
    if x.shape[-1] != width:
        raise ShapeMismatchError(f"frame width {x.shape[-1]} does not match layer width {width}")


def lora_attention(x, layer: VideoLayer) -> Tensor:
    """softmax(Q K^T / sqrt(D)) V with Q = x(W_Q + A_Q B_Q), K = x W_K, V = x(W_V + A_V B_V)."""
    x = as_tensor(x)
    _check_width(x, layer.width)
    q = x @ layer.w_q + (x @ layer.a_q) @ layer.b_q
    k = x @ layer.w_k
    v = x @ layer.w_v + (x @ layer.a_v) @ layer.b_v
    weights = softmax_op((q @ k.T) / np.sqrt(layer.width), axis=-1)
    return weights @ v


def frozen_attention(x, layer: VideoLayer) -> np.ndarray:
    """The base attention path with both adapters skipped."""
    x = np.asarray(x.value if isinstance(x, Tensor) else x, dtype=np.float64)
    q = x @ layer.w_q.value
    k = x @ layer.w_k.value
    v = x @ layer.w_v.value
    weights = softmax_values((q @ np.swapaxes(k, -1, -2)) / np.sqrt(layer.width), axis=-1)
    return weights @ v


def frozen_video_forward(frames, state: VideoEncoderState) -> np.ndarray:
    x = np.asarray(frames.value if isinstance(frames, Tensor) else frames, dtype=np.float64)
    for layer in state.layers:
        x = x + frozen_attention(x, layer)
    return x


def encode_video(frames, state: VideoEncoderState) -> Tensor:
    """Frame features for an (M, D) frame sequence or a (B, M, D) batch."""
    x = as_tensor(frames)
    if x.ndim < 2 or x.shape[-2] == 0:
        raise EmptySequenceError(f"video input needs at least one frame, got shape {x.shape}")
    _check_width(x, state.width)
    for layer in state.layers:
        x = x + lora_attention(x, layer)
    return x
