"""Residual regression transformer over a single-channel cost.

Depth is the channel axis here: each pixel's ``D`` costs form a token
that 2-D windowed layers mix spatially.
"""

from __future__ import annotations

import numpy.typing as npt

from Costformer.cost_volume import AggregatedCost
from Costformer.errors import DomainError, ShapeError
from Costformer.tensor_core import LinearParams, Module, Tensor, linear
from Costformer.tensor_core.nn import component_rng, init_linear
from Costformer.tensor_core.tensor import DEFAULT_DTYPE
from Costformer.transformer.layers import (
    AttentionVariant,
    DatlParams,
    layer_pairs_forward,
)
from Costformer.transformer.rdact import pad_to_patches, unpatch_nearest

DEFAULT_RRT_WINDOW = 8


class RrtParams(Module):
    """Embedding ``D -> E_r``, 2-D layer pairs and the zero-started ``RER``."""

    def __init__(
        self,
        embed: LinearParams,
        layers: list[DatlParams],
        rer: LinearParams,
        patch: int = 1,
    ) -> None:
        """Assemble the block from its parts."""
        if patch < 1:
            raise DomainError(f"patch must be >= 1, got {patch}")
        if not layers or len(layers) % 2:
            raise DomainError("need a positive, even number of layers")
        if embed.in_dim % (patch * patch):
            raise ShapeError(
                f"embedding input {embed.in_dim} is not whole patches"
            )
        depth = embed.in_dim // (patch * patch)
        if (rer.in_dim, rer.out_dim) != (embed.out_dim, depth):
            raise ShapeError(
                f"re-embedding maps {rer.in_dim}->{rer.out_dim}, "
                f"expected {embed.out_dim}->{depth}"
            )
        self.patch = patch
        self.embed = embed
        self.layers = layers
        self.rer = rer

    @property
    def depth(self) -> int:
        """Hypothesis count ``D`` the block was built for."""
        return self.rer.out_dim

    @property
    def dim(self) -> int:
        """Embedding width ``E_r``."""
        return self.embed.out_dim

    @classmethod
    def create(
        cls,
        seed: int,
        name: str,
        depth: int,
        dim: int,
        pairs: int = 2,
        heads: int = 2,
        window: int = DEFAULT_RRT_WINDOW,
        patch: int = 1,
        dtype: npt.DTypeLike = DEFAULT_DTYPE,
    ) -> RrtParams:
        """Initialize a block whose parts draw from their own streams."""
        embed = init_linear(
            component_rng(seed, f"{name}.embed"),
            patch * patch * depth,
            dim,
            dtype=dtype,
        )
        layers = [
            DatlParams(
                component_rng(seed, f"{name}.layers.{index}"),
                dim,
                heads,
                (window, window),
                AttentionVariant.SPATIAL,
                dtype=dtype,
            )
            for index in range(2 * pairs)
        ]
        rer = init_linear(
            component_rng(seed, f"{name}.rer"),
            dim,
            depth,
            zero=True,
            dtype=dtype,
        )
        return cls(embed, layers, rer, patch)


def rrt_embed(c: AggregatedCost, params: RrtParams) -> Tensor:
    """Treat depth as channels and project each pixel (or patch) to ``E_r``."""
    if c.shape[2] != params.depth:
        raise ShapeError(f"block expects D={params.depth}, got {c.shape[2]}")
    if params.patch == 1:
        return linear(c.cost, params.embed)
    padded = pad_to_patches(c.cost, (params.patch, params.patch))
    patches = padded.rearrange(
        "(hs ph) (ws pw) d -> hs ws (ph pw d)", ph=params.patch, pw=params.patch
    )
    return linear(patches, params.embed)


def rrt_forward(c0: AggregatedCost, params: RrtParams) -> AggregatedCost:
    """Embed, run the 2-D layer pairs, re-embed to ``D`` and add ``c0``."""
    height, width, _ = c0.shape
    tokens = layer_pairs_forward(rrt_embed(c0, params), params.layers)
    patch = (params.patch, params.patch)
    restored = unpatch_nearest(
        linear(tokens, params.rer), patch, (height, width)
    )
    return AggregatedCost(restored + c0.cost)
