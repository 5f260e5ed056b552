"""Modality projection heads mapping encoder width D to the prototype dimension d."""
from dataclasses import dataclass

import numpy as np

from structalign.diffmath import Tensor, as_tensor, tanh
from structalign.exceptions import ShapeMismatchError


@dataclass
class ProjectionHead:
    """x W_s + tanh(x W_1 + b_1) W_2 + b_2."""

    w_skip: Tensor
    w_hidden: Tensor
    b_hidden: Tensor
    w_out: Tensor
    b_out: Tensor

    @property
    def in_dim(self) -> int:
        return self.w_skip.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w_skip.shape[1]

    def trainable(self) -> dict[str, Tensor]:
        return {
            "w_skip": self.w_skip,
            "w_hidden": self.w_hidden,
            "b_hidden": self.b_hidden,
            "w_out": self.w_out,
            "b_out": self.b_out,
        }


@dataclass
class ProjectionHeads:
    text: ProjectionHead
    video: ProjectionHead

    def trainable(self) -> dict[str, Tensor]:
        params = {f"head.text.{k}": v for k, v in self.text.trainable().items()}
        params.update({f"head.video.{k}": v for k, v in self.video.trainable().items()})
        return params


def init_projection_head(
    rng: np.random.Generator,
    in_dim: int,
    out_dim: int,
    hidden: int | None = None,
    identity: bool = False,
) -> ProjectionHead:
    """Random head, or with ``identity=True`` (requires in_dim == out_dim) the identity map."""
    hidden = hidden or out_dim
    if identity and in_dim != out_dim:
        raise ShapeMismatchError(f"an identity head needs in_dim == out_dim, got {in_dim} and {out_dim}")
    scale = 1.0 / np.sqrt(in_dim)
    return ProjectionHead(
        w_skip=Tensor(np.eye(in_dim) if identity else rng.normal(0.0, scale, (in_dim, out_dim))),
        w_hidden=Tensor(rng.normal(0.0, scale, (in_dim, hidden))),
        b_hidden=Tensor(np.zeros(hidden)),
        w_out=Tensor(np.zeros((hidden, out_dim)) if identity else rng.normal(0.0, 0.1 / np.sqrt(hidden), (hidden, out_dim))),
        b_out=Tensor(np.zeros(out_dim)),
    )


def init_projection_heads(rng: np.random.Generator, in_dim: int, out_dim: int) -> ProjectionHeads:
    return ProjectionHeads(
        text=init_projection_head(rng, in_dim, out_dim),
        video=init_projection_head(rng, in_dim, out_dim),
    )


def project_to_prototype_space(features, head: ProjectionHead) -> Tensor:
    """Apply a head row-wise over the last axis; leading axes are untouched."""
    x = as_tensor(features)
    if x.shape[-1] != head.in_dim:
        raise ShapeMismatchError(f"feature width {x.shape[-1]} does not match head input {head.in_dim}")
    if x.ndim == 1:
        x = x.reshape(1, head.in_dim)
        return _apply(x, head).reshape(head.out_dim)
    return _apply(x, head)


def _apply(x: Tensor, head: ProjectionHead) -> Tensor:
    hidden = tanh(x @ head.w_hidden + head.b_hidden)
    return x @ head.w_skip + hidden @ head.w_out + head.b_out
