"""Text encoder: frozen linear layers with a top-k routed mixture of low-rank experts."""
from dataclasses import dataclass, field

import numpy as np

from structalign.diffmath import Tensor, as_tensor, tanh
from structalign.diffmath.tensor import softmax_op
from structalign.exceptions import EmptySequenceError, KTooLargeError, ShapeMismatchError


@dataclass
class TextLayer:
    """One text layer: frozen weight plus router and expert pairs (A_i, B_i)."""

    weight: Tensor
    router: Tensor
    expert_down: list[Tensor]
    expert_up: list[Tensor]
    k_e: int

    def __post_init__(self):
        if not 1 <= self.k_e <= self.num_experts:
            raise KTooLargeError(f"k_e={self.k_e} must lie in [1, {self.num_experts}]")

    @property
    def width(self) -> int:
        return self.weight.shape[0]

    @property
    def num_experts(self) -> int:
        return len(self.expert_down)

    def frozen(self) -> dict[str, Tensor]:
        return {"weight": self.weight}

    def trainable(self) -> dict[str, Tensor]:
        params = {"router": self.router}
        for i, (down, up) in enumerate(zip(self.expert_down, self.expert_up)):
            params[f"expert.{i}.down"] = down
            params[f"expert.{i}.up"] = up
        return params


@dataclass
class TextEncoderState:
    layers: list[TextLayer] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.layers[0].width

    def frozen(self) -> dict[str, Tensor]:
        return {f"text.{l}.{k}": v for l, layer in enumerate(self.layers) for k, v in layer.frozen().items()}

    def trainable(self) -> dict[str, Tensor]:
        return {f"text.{l}.{k}": v for l, layer in enumerate(self.layers) for k, v in layer.trainable().items()}


def init_text_encoder(
    rng: np.random.Generator,
    width: int,
    layers: int = 2,
    experts: int = 4,
    k_e: int = 2,
    rank: int = 4,
) -> TextEncoderState:
    """Random frozen weights, small random router and A_i, zero B_i."""
    if k_e > experts:
        raise KTooLargeError(f"k_e={k_e} exceeds the expert count {experts}")
    scale = 1.0 / np.sqrt(width)
    state = TextEncoderState()
    for _ in range(layers):
        state.layers.append(
            TextLayer(
                weight=Tensor(rng.normal(0.0, scale, (width, width))),
                router=Tensor(rng.normal(0.0, scale, (width, experts))),
                expert_down=[Tensor(rng.normal(0.0, scale, (width, rank))) for _ in range(experts)],
                expert_up=[Tensor(np.zeros((rank, width))) for _ in range(experts)],
                k_e=k_e,
            )
        )
    return state


def top_k_mask(logits: np.ndarray, k_e: int) -> np.ndarray:
    """Boolean mask of the k_e largest logits per row; the lower index wins ties."""
    logits = np.asarray(logits, dtype=np.float64)
    num_experts = logits.shape[-1]
    if k_e > num_experts:
        raise KTooLargeError(f"k_e={k_e} exceeds the expert count {num_experts}")
    order = np.argsort(-logits, axis=-1, kind="stable")
    mask = np.zeros(logits.shape, dtype=bool)
    np.put_along_axis(mask, order[..., :k_e], True, axis=-1)
    return mask


def router_gates(logits, k_e: int) -> Tensor:
    """Softmax over the top-k_e router logits; the other gates are exactly zero."""
    logits = as_tensor(logits)
    return softmax_op(logits, axis=-1, mask=top_k_mask(logits.value, k_e))


def moe_forward(x, layer: TextLayer) -> Tensor:
    """Frozen linear output plus the gated sum of expert residuals x A_i B_i."""
    x = as_tensor(x)
    if x.shape[-1] != layer.width:
        raise ShapeMismatchError(f"token width {x.shape[-1]} does not match layer width {layer.width}")
    out = x @ layer.weight
    gates = router_gates(x @ layer.router, layer.k_e)
    for i, (down, up) in enumerate(zip(layer.expert_down, layer.expert_up)):
        out = out + gates[..., i:i + 1] * ((x @ down) @ up)
    return out


def frozen_text_forward(tokens, state: TextEncoderState) -> np.ndarray:
    """Base encoding with every adapter skipped."""
    x = np.asarray(tokens.value if isinstance(tokens, Tensor) else tokens, dtype=np.float64)
    for layer in state.layers:
        x = x + np.tanh(x @ layer.weight.value)
    return x


def encode_text(tokens, state: TextEncoderState) -> Tensor:
    """Word features for an (N, D) token sequence or a (B, N, D) batch of equal-length sequences."""
    x = as_tensor(tokens)
    if x.ndim < 2 or x.shape[-2] == 0:
        raise EmptySequenceError(f"text input needs at least one token, got shape {x.shape}")
    if x.shape[-1] != state.width:
        raise ShapeMismatchError(f"token width {x.shape[-1]} does not match encoder width {state.width}")
    for layer in state.layers:
        x = x + tanh(moe_forward(x, layer))
    return x
