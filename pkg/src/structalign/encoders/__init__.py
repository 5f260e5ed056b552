"""Frozen-backbone encoders with trainable adapters and projection heads."""
from structalign.encoders.checkpoint import load_checkpoint, save_checkpoint
from structalign.encoders.heads import (
    ProjectionHead,
    ProjectionHeads,
    init_projection_head,
    init_projection_heads,
    project_to_prototype_space,
)
from structalign.encoders.text import (
    TextEncoderState,
    TextLayer,
    encode_text,
    frozen_text_forward,
    init_text_encoder,
    moe_forward,
    router_gates,
    top_k_mask,
)
from structalign.encoders.video import (
    VideoEncoderState,
    VideoLayer,
    encode_video,
    frozen_attention,
    frozen_video_forward,
    init_video_encoder,
    lora_attention,
)

__all__ = [
    "ProjectionHead",
    "ProjectionHeads",
    "TextEncoderState",
    "TextLayer",
    "VideoEncoderState",
    "VideoLayer",
    "encode_text",
    "encode_video",
    "frozen_attention",
    "frozen_text_forward",
    "frozen_video_forward",
    "init_projection_head",
    "init_projection_heads",
    "init_text_encoder",
    "init_video_encoder",
    "load_checkpoint",
    "lora_attention",
    "moe_forward",
    "project_to_prototype_space",
    "router_gates",
    "save_checkpoint",
    "top_k_mask",
]
