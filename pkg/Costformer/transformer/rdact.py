"""Residual depth-aware cost transformer over a grouped cost volume."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import numpy.typing as npt

from Costformer.cost_volume import CostVolume
from Costformer.errors import DomainError, ShapeError
from Costformer.tensor_core import (
    LayerNormParams,
    LinearParams,
    Module,
    Tensor,
    apply_layer_norm,
    linear,
)
from Costformer.tensor_core.nn import (
    component_rng,
    init_layer_norm,
    init_linear,
)
from Costformer.tensor_core.tensor import DEFAULT_DTYPE
from Costformer.transformer.layers import (
    AttentionVariant,
    DatlParams,
    layer_pairs_forward,
)

DEFAULT_PATCH = (4, 4, 1)
DEFAULT_WINDOW = (7, 7, 2)


def pad_to_patches(x: Tensor, patch: Sequence[int]) -> Tensor:
    """Zero-pad the leading axes of ``x`` up to multiples of ``patch``."""
    widths = [
        (0, -extent % size)
        for extent, size in zip(x.shape[: len(patch)], patch, strict=True)
    ]
    widths += [(0, 0)] * (x.ndim - len(widths))
    return x.pad(widths)


def unpatch_nearest(
    tokens: Tensor, patch: Sequence[int], extents: Sequence[int]
) -> Tensor:
    """Repeat every token over its ``patch`` cell and crop to ``extents``.

    ``tokens`` is ``[H', W', ...]``; the spatial patch ``(ph, pw)`` is
    undone by nearest-neighbour upsampling of the first two axes.
    """
    ph, pw = patch[0], patch[1]
    if (ph, pw) == (1, 1):
        return tokens
    hs, ws, *rest = tokens.shape
    expanded = tokens.reshape(hs, 1, ws, 1, *rest).broadcast_to(
        (hs, ph, ws, pw, *rest)
    )
    full = expanded.reshape(hs * ph, ws * pw, *rest)
    return full[: extents[0], : extents[1]]


class PatchEmbedParams(Module):
    """Strided ``h x w x 1`` patch projection ``G -> E`` and its norm."""

    def __init__(
        self,
        proj: LinearParams,
        norm: LayerNormParams,
        patch: Sequence[int] = DEFAULT_PATCH,
    ) -> None:
        """Bind the projection; its input width must cover one patch."""
        self.patch = tuple(int(p) for p in patch)
        if len(self.patch) != 3 or any(p < 1 for p in self.patch):
            raise DomainError(f"patch must be three extents >= 1, got {patch}")
        if self.patch[2] != 1:
            raise DomainError("depth-aware patches keep depth at 1")
        self.proj = proj
        self.norm = norm

    @property
    def groups(self) -> int:
        """Cost groups ``G`` consumed per voxel."""
        return self.proj.in_dim // (self.patch[0] * self.patch[1])

    @property
    def dim(self) -> int:
        """Embedding width ``E``."""
        return self.proj.out_dim

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        groups: int,
        dim: int,
        patch: Sequence[int] = DEFAULT_PATCH,
        dtype: npt.DTypeLike = DEFAULT_DTYPE,
    ) -> PatchEmbedParams:
        """Initialize a fresh embedding."""
        inputs = int(patch[0]) * int(patch[1]) * groups
        return cls(
            init_linear(rng, inputs, dim, dtype=dtype),
            init_layer_norm(dim, dtype),
            patch,
        )


def patch_embed(cv: CostVolume, p: PatchEmbedParams) -> Tensor:
    """Embed ``[H, W, D, G]`` into ``[H*, W*, D, E]`` tokens."""
    if cv.group_count != p.groups:
        raise ShapeError(f"embedding takes G={p.groups}, got {cv.group_count}")
    ph, pw, _ = p.patch
    padded = pad_to_patches(cv.cost, p.patch)
    patches = padded.rearrange(
        "(hs ph) (ws pw) d g -> hs ws d (ph pw g)", ph=ph, pw=pw
    )
    return apply_layer_norm(linear(patches, p.proj), p.norm)


class RdactParams(Module):
    """Embedding, ``L`` regular/shifted layer pairs and the re-embedding.

    ``rec`` maps tokens back to ``G`` groups and starts at zero; ``None``
    means the identity re-embedding, which needs ``E == G`` and 1x1
    patches.
    """

    def __init__(
        self,
        embed: PatchEmbedParams,
        layers: Sequence[DatlParams],
        rec: LinearParams | None,
    ) -> None:
        """Assemble the block from its parts."""
        if not layers or len(layers) % 2:
            raise DomainError("need a positive, even number of layers")
        if rec is None and (
            embed.dim != embed.groups or embed.patch[:2] != (1, 1)
        ):
            raise ShapeError(
                "identity re-embedding needs E == G and 1x1 patches"
            )
        if rec is not None and (rec.in_dim, rec.out_dim) != (
            embed.dim,
            embed.groups,
        ):
            raise ShapeError(
                f"re-embedding maps {rec.in_dim}->{rec.out_dim}, "
                f"expected {embed.dim}->{embed.groups}"
            )
        self.embed = embed
        self.layers = list(layers)
        self.rec = rec

    @property
    def pair_count(self) -> int:
        """Number ``L`` of regular/shifted pairs."""
        return len(self.layers) // 2

    @classmethod
    def create(
        cls,
        seed: int,
        name: str,
        groups: int,
        dim: int,
        pairs: int,
        heads: int = 2,
        patch: Sequence[int] = DEFAULT_PATCH,
        window: Sequence[int] = DEFAULT_WINDOW,
        variant: AttentionVariant | str = AttentionVariant.DEPTH_SPATIAL,
        identity_rec: bool = False,
        dtype: npt.DTypeLike = DEFAULT_DTYPE,
    ) -> RdactParams:
        """Initialize a block whose parts draw from their own streams."""
        if pairs < 1:
            raise DomainError(f"need at least one layer pair, got {pairs}")
        embed = PatchEmbedParams.create(
            component_rng(seed, f"{name}.embed"), groups, dim, patch, dtype
        )
        layers = [
            DatlParams(
                component_rng(seed, f"{name}.layers.{index}"),
                dim,
                heads,
                window,
                variant,
                dtype=dtype,
            )
            for index in range(2 * pairs)
        ]
        if identity_rec:
            rec = None
        else:
            rec = init_linear(
                component_rng(seed, f"{name}.rec"), dim, groups, zero=True,
                dtype=dtype,
            )
        return cls(embed, layers, rec)


def rdact_forward(c0: CostVolume, p: RdactParams) -> CostVolume:
    """Embed, run the layer pairs, re-embed to ``G`` groups, add ``c0``."""
    height, width, depth, groups = c0.shape
    tokens = layer_pairs_forward(patch_embed(c0, p.embed), p.layers)
    grouped = tokens if p.rec is None else linear(tokens, p.rec)
    restored = unpatch_nearest(grouped, p.embed.patch, (height, width))
    if restored.shape != (height, width, depth, groups):
        raise ShapeError(f"re-embedded cost {restored.shape} != {c0.shape}")
    return c0.with_cost(restored + c0.cost)
