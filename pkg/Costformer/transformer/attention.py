"""Multi-head window attention with relative position biases."""

from __future__ import annotations

from collections.abc import Sequence
from typing import NamedTuple

import numpy as np
import numpy.typing as npt

from Costformer.errors import ShapeError
from Costformer.tensor_core import (
    LinearParams,
    Module,
    Tensor,
    linear,
    softmax,
)
from Costformer.tensor_core.nn import init_linear, trunc_normal
from Costformer.tensor_core.tensor import DEFAULT_DTYPE
from Costformer.transformer.windows import (
    bias_table_size,
    relative_position_index,
)


class AttentionOutput(NamedTuple):
    """Attended tokens plus the ``[Nw, heads, T, T]`` weights."""

    tokens: Tensor
    weights: np.ndarray


class AttentionParams(Module):
    """Query/key/value/output projections and a relative-bias table.

    ``table`` are the window extents the bias table is sized for: the full
    window for attention over a whole window, ``(d_s,)`` for attention
    along depth fibres.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        dim: int,
        heads: int,
        table: Sequence[int],
        zero_output: bool = False,
        dtype: npt.DTypeLike = DEFAULT_DTYPE,
    ) -> None:
        """Initialize projections with fan-in scaling and the table at 0.02."""
        if heads < 1 or dim % heads:
            raise ShapeError(f"{heads} heads do not divide embedding {dim}")
        self.heads = heads
        self.table = tuple(table)
        self.query = init_linear(rng, dim, dim, dtype=dtype)
        self.key = init_linear(rng, dim, dim, dtype=dtype)
        self.value = init_linear(rng, dim, dim, dtype=dtype)
        self.output = init_linear(rng, dim, dim, zero=zero_output, dtype=dtype)
        self.bias_table = trunc_normal(
            rng, (bias_table_size(self.table), heads), dtype=dtype
        )

    @property
    def dim(self) -> int:
        """Embedding width."""
        return self.query.in_dim

    @property
    def head_dim(self) -> int:
        """Width of one head."""
        return self.dim // self.heads

    def bias(self, window: Sequence[int]) -> Tensor:
        """Gather the ``[heads, T, T]`` bias for a window of these extents."""
        index = relative_position_index(window, self.table)
        tokens = index.shape[0]
        gathered = self.bias_table[index.reshape(-1)]
        return gathered.reshape(tokens, tokens, self.heads).transpose(2, 0, 1)


def _split_heads(x: Tensor, p: LinearParams, heads: int) -> Tensor:
    """Project ``[N, T, E]`` and split it into ``[N, heads, T, E / heads]``."""
    return linear(x, p).rearrange("n t (h c) -> n h t c", h=heads)


def multi_head_attention(
    tokens: Tensor,
    params: AttentionParams,
    bias: Tensor | None,
    mask: np.ndarray | None = None,
) -> AttentionOutput:
    """Scaled dot-product attention within each row of ``tokens[N, T, E]``.

    Scores are ``Q K^T / sqrt(E / heads) + bias + mask``, normalized over
    keys. ``mask`` is additive, ``[N, T, T]``.
    """
    if tokens.ndim != 3 or tokens.shape[2] != params.dim:
        raise ShapeError(f"tokens {tokens.shape} are not [N, T, {params.dim}]")
    n, t, _ = tokens.shape
    if mask is not None and mask.shape != (n, t, t):
        raise ShapeError(f"mask {mask.shape} is not [{n}, {t}, {t}]")
    q = _split_heads(tokens, params.query, params.heads)
    k = _split_heads(tokens, params.key, params.heads)
    v = _split_heads(tokens, params.value, params.heads)
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(params.head_dim))
    if bias is not None:
        scores = scores + bias.reshape(1, params.heads, t, t)
    if mask is not None:
        scores = scores + mask[:, None].astype(scores.dtype)
    weights = softmax(scores, axis=-1)
    mixed = (weights @ v).rearrange("n h t c -> n t (h c)")
    return AttentionOutput(linear(mixed, params.output), weights.data)


def da_sa1(
    windows: Tensor,
    params: AttentionParams,
    window: Sequence[int],
    mask: np.ndarray | None = None,
) -> AttentionOutput:
    """Attention over all tokens of each window with the full-window bias."""
    expected = int(np.prod(window))
    if windows.ndim != 3 or windows.shape[1] != expected:
        raise ShapeError(
            f"windows {windows.shape} do not hold {expected} tokens each"
        )
    return multi_head_attention(windows, params, params.bias(window), mask)


def depth_fibre_mask(mask: np.ndarray, depth: int) -> np.ndarray:
    """Restrict a ``[Nw, T, T]`` window mask to each depth fibre.

    Returns ``[Nw * (T / depth), depth, depth]`` in fibre order.
    """
    nw, tokens, _ = mask.shape
    fibres = tokens // depth
    blocks = mask.reshape(nw, fibres, depth, fibres, depth)
    diagonal = np.diagonal(blocks, axis1=1, axis2=3)
    return np.moveaxis(diagonal, -1, 1).reshape(nw * fibres, depth, depth)


def da_sa2(
    windows: Tensor,
    params: AttentionParams,
    window: Sequence[int],
    mask: np.ndarray | None = None,
) -> AttentionOutput:
    """Attention restricted to the depth tokens of each spatial position.

    ``window`` is ``(h_s, w_s, d_s)``; each window is regrouped into
    ``h_s * w_s`` fibres of ``d_s`` tokens that attend only among
    themselves, biased by relative depth offset.
    """
    if len(window) != 3:
        raise ShapeError(f"depth attention needs a 3-D window, got {window}")
    depth = int(window[2])
    nw, tokens, dim = windows.shape
    if tokens != int(np.prod(window)):
        raise ShapeError(
            f"windows {windows.shape} do not hold {int(np.prod(window))} tokens"
        )
    fibres = windows.reshape(nw * (tokens // depth), depth, dim)
    fibre_mask = None if mask is None else depth_fibre_mask(mask, depth)
    bias = params.bias((depth,))
    out = multi_head_attention(fibres, params, bias, fibre_mask)
    weights = out.weights.reshape(
        nw, tokens // depth, params.heads, depth, depth
    )
    return AttentionOutput(out.tokens.reshape(nw, tokens, dim), weights)
