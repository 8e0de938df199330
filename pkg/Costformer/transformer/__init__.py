"""Windowed transformers over cost volumes."""

from Costformer.transformer.attention import (
    AttentionParams,
    da_sa1,
    da_sa2,
    multi_head_attention,
)
from Costformer.transformer.layers import (
    AttentionVariant,
    DatlParams,
    dastl_forward,
    datl_forward,
)
from Costformer.transformer.rdact import (
    PatchEmbedParams,
    RdactParams,
    patch_embed,
    rdact_forward,
)
from Costformer.transformer.rrt import RrtParams, rrt_embed, rrt_forward
from Costformer.transformer.windows import (
    WindowLayout,
    WindowSpec,
    relative_position_index,
    token_count,
    window_partition,
    window_reverse,
)

__all__ = [
    "AttentionParams",
    "AttentionVariant",
    "DatlParams",
    "PatchEmbedParams",
    "RdactParams",
    "RrtParams",
    "WindowLayout",
    "WindowSpec",
    "da_sa1",
    "da_sa2",
    "dastl_forward",
    "datl_forward",
    "multi_head_attention",
    "patch_embed",
    "rdact_forward",
    "relative_position_index",
    "rrt_embed",
    "rrt_forward",
    "token_count",
    "window_partition",
    "window_reverse",
]
