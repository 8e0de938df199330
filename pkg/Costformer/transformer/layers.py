"""Depth-aware transformer layers over regular and shifted windows."""

from __future__ import annotations

from collections.abc import Sequence
from enum import StrEnum

import numpy as np
import numpy.typing as npt

from Costformer.errors import DomainError, ShapeError
from Costformer.tensor_core import Module, Tensor, apply_layer_norm, mlp_gelu
from Costformer.tensor_core.nn import init_layer_norm, init_linear
from Costformer.tensor_core.tensor import DEFAULT_DTYPE
from Costformer.transformer.attention import AttentionParams, da_sa1, da_sa2
from Costformer.transformer.windows import (
    WindowSpec,
    window_partition,
    window_reverse,
)

MLP_RATIO = 4


class AttentionVariant(StrEnum):
    """Which attentions a layer stacks before its MLP."""

    DEPTH_SPATIAL = "depth_spatial"
    SPATIAL = "spatial"


class DatlParams(Module):
    """One transformer layer: window attention, then a GELU MLP.

    The depth-spatial variant first attends along depth fibres, normalizes,
    then attends over the whole window. The spatial variant only keeps
    the whole-window attention and works for any number of grid axes.
    The outer attention output and the second MLP layer start at zero, so
    a fresh layer is the identity.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        dim: int,
        heads: int,
        window: Sequence[int],
        variant: AttentionVariant | str = AttentionVariant.DEPTH_SPATIAL,
        mlp_ratio: int = MLP_RATIO,
        dtype: npt.DTypeLike = DEFAULT_DTYPE,
    ) -> None:
        """Create the layer for ``dim``-wide tokens and ``window`` extents."""
        self.variant = AttentionVariant(variant)
        self.window = tuple(int(w) for w in window)
        if self.variant is AttentionVariant.DEPTH_SPATIAL:
            if len(self.window) != 3:
                raise DomainError("depth attention needs a 3-D window")
            self.norm_depth = init_layer_norm(dim, dtype)
            self.depth_attention = AttentionParams(
                rng, dim, heads, self.window[2:], dtype=dtype
            )
        self.norm_window = init_layer_norm(dim, dtype)
        self.window_attention = AttentionParams(
            rng, dim, heads, self.window, zero_output=True, dtype=dtype
        )
        self.norm_mlp = init_layer_norm(dim, dtype)
        self.fc1 = init_linear(rng, dim, mlp_ratio * dim, dtype=dtype)
        self.fc2 = init_linear(
            rng, mlp_ratio * dim, dim, zero=True, dtype=dtype
        )

    @property
    def dim(self) -> int:
        """Token width."""
        return self.fc1.in_dim


def _attend(x: Tensor, p: DatlParams, spec: WindowSpec) -> Tensor:
    """Return the attention branch of a layer on the ``[*grid, E]`` grid."""
    if spec.extents != p.window:
        raise ShapeError(f"layer window {p.window} differs from {spec.extents}")
    if x.ndim != len(p.window) + 1 or x.shape[-1] != p.dim:
        raise ShapeError(
            f"tokens {x.shape} do not fit layer {p.window}x{p.dim}"
        )
    part = window_partition(x, spec)
    window = part.layout.window
    tokens = part.windows
    if p.variant is AttentionVariant.DEPTH_SPATIAL:
        tokens = apply_layer_norm(tokens, p.norm_depth)
        tokens = da_sa2(tokens, p.depth_attention, window, part.mask).tokens
    tokens = apply_layer_norm(tokens, p.norm_window)
    tokens = da_sa1(tokens, p.window_attention, window, part.mask).tokens
    return window_reverse(tokens, part.layout)


def layer_forward(x: Tensor, p: DatlParams, spec: WindowSpec) -> Tensor:
    """Apply one layer with the residual around attention and MLP."""
    attended = _attend(x, p, spec) + x
    normed = apply_layer_norm(attended, p.norm_mlp)
    return mlp_gelu(normed, p.fc1, p.fc2) + attended


def datl_forward(x: Tensor, p: DatlParams, spec: WindowSpec) -> Tensor:
    """Layer over regular windows."""
    if spec.shifted:
        raise DomainError("regular-window layer got a shifted window spec")
    return layer_forward(x, p, spec)


def dastl_forward(x: Tensor, p: DatlParams, spec: WindowSpec) -> Tensor:
    """Layer over windows shifted by half their extent."""
    if not spec.shifted:
        raise DomainError("shifted-window layer got a regular window spec")
    return layer_forward(x, p, spec)


def layer_pairs_forward(x: Tensor, layers: Sequence[DatlParams]) -> Tensor:
    """Alternate regular and shifted layers, starting with a regular one."""
    for index, layer in enumerate(layers):
        spec = WindowSpec(layer.window, shifted=index % 2 == 1)
        if spec.shifted:
            x = dastl_forward(x, layer, spec)
        else:
            x = datl_forward(x, layer, spec)
    return x
