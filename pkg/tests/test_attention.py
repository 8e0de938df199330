"""Tests for window attention and the depth-aware transformer layers."""

from __future__ import annotations

import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from scipy import special

from Costformer.errors import DomainError, ShapeError
from Costformer.tensor_core import LayerNormParams, Tensor
from Costformer.tensor_core.functional import LAYER_NORM_EPS
from Costformer.transformer import (
    AttentionParams,
    AttentionVariant,
    DatlParams,
    WindowSpec,
    da_sa1,
    da_sa2,
    dastl_forward,
    datl_forward,
    multi_head_attention,
    window_partition,
)


def naive_attention(
    tokens: np.ndarray, params: AttentionParams, bias: np.ndarray | None
) -> np.ndarray:
    """Per-window, per-head attention with explicit loops."""
    n, t, dim = tokens.shape
    heads, width = params.heads, params.head_dim
    out = np.zeros((n, t, dim))
    for window in range(n):
        x = tokens[window]
        q = x @ params.query.weight.data + params.query.bias.data
        k = x @ params.key.weight.data + params.key.bias.data
        v = x @ params.value.weight.data + params.value.bias.data
        mixed = np.zeros((t, dim))
        for head in range(heads):
            span = slice(head * width, (head + 1) * width)
            scores = q[:, span] @ k[:, span].T / np.sqrt(width)
            if bias is not None:
                scores = scores + bias[head]
            scores = np.exp(scores - scores.max(axis=1, keepdims=True))
            scores /= scores.sum(axis=1, keepdims=True)
            mixed[:, span] = scores @ v[:, span]
        out[window] = mixed @ params.output.weight.data + params.output.bias.data
    return out


def layer_norm_loop(x: np.ndarray, params: LayerNormParams) -> np.ndarray:
    """Normalize the last axis of ``x`` in double precision."""
    centered = x - x.mean(axis=-1, keepdims=True)
    scale = np.sqrt((centered**2).mean(axis=-1, keepdims=True) + LAYER_NORM_EPS)
    return centered / scale * params.gamma.data + params.beta.data


def layer_loop(x: np.ndarray, layer: DatlParams) -> np.ndarray:
    """Regular-window depth-spatial layer assembled from the loop oracles."""
    hs, ws, ds = layer.window
    height, width, depth, dim = x.shape
    attended = np.empty_like(x)
    depth_bias = layer.depth_attention.bias((ds,)).data
    window_bias = layer.window_attention.bias(layer.window).data
    for a in range(0, height, hs):
        for b in range(0, width, ws):
            for c in range(0, depth, ds):
                block = x[a : a + hs, b : b + ws, c : c + ds]
                tokens = layer_norm_loop(block.reshape(-1, dim), layer.norm_depth)
                fibres = naive_attention(
                    tokens.reshape(hs * ws, ds, dim),
                    layer.depth_attention,
                    depth_bias,
                )
                normed = layer_norm_loop(
                    fibres.reshape(-1, dim), layer.norm_window
                )
                mixed = naive_attention(
                    normed[None], layer.window_attention, window_bias
                )
                attended[a : a + hs, b : b + ws, c : c + ds] = mixed.reshape(
                    block.shape
                )
    attended = attended + x
    hidden = layer_norm_loop(attended, layer.norm_mlp) @ layer.fc1.weight.data
    hidden = hidden + layer.fc1.bias.data
    hidden = hidden * special.ndtr(hidden)
    return hidden @ layer.fc2.weight.data + layer.fc2.bias.data + attended


class AttentionTests(unittest.TestCase):
    """Validate multi-head attention against a loop oracle."""

    def setUp(self) -> None:
        """Create parameters with a non-zero output projection."""
        self.rng = np.random.default_rng(8)
        self.params = AttentionParams(self.rng, 8, 2, (2, 2, 2), dtype=np.float64)
        self.tokens = self.rng.standard_normal((3, 8, 8))

    def test_matches_loop_oracle(self) -> None:
        """Agree with the explicit computation including the bias."""
        bias = self.params.bias((2, 2, 2))

        out = multi_head_attention(
            Tensor(self.tokens, dtype=np.float64), self.params, bias
        )

        assert_allclose(
            out.tokens.data,
            naive_attention(self.tokens, self.params, bias.data),
            atol=1e-10,
        )

    def test_weights_are_distributions(self) -> None:
        """Normalize the attention weights over keys."""
        out = da_sa1(Tensor(self.tokens, dtype=np.float64), self.params, (2, 2, 2))

        self.assertEqual(out.weights.shape, (3, 2, 8, 8))
        assert_allclose(out.weights.sum(axis=-1), np.ones((3, 2, 8)))

    def test_bias_shape(self) -> None:
        """Gather one ``[T, T]`` bias per head."""
        self.assertEqual(self.params.bias((2, 2, 2)).shape, (2, 8, 8))

    def test_heads_must_divide_dim(self) -> None:
        """Refuse an uneven head split."""
        with self.assertRaises(ShapeError):
            AttentionParams(self.rng, 6, 4, (2,))

    def test_zero_output_projection(self) -> None:
        """Emit zeros when the output projection starts at zero."""
        params = AttentionParams(
            self.rng, 8, 2, (2, 2, 2), zero_output=True, dtype=np.float64
        )

        out = da_sa1(Tensor(self.tokens, dtype=np.float64), params, (2, 2, 2))

        assert_array_equal(out.tokens.data, np.zeros_like(self.tokens))

    def test_depth_attention_stays_in_fibres(self) -> None:
        """Leave other fibres untouched when one fibre changes."""
        params = AttentionParams(self.rng, 8, 2, (2,), dtype=np.float64)
        changed = self.tokens.copy()
        changed[:, 2:4] += 1.0

        before = da_sa2(Tensor(self.tokens, dtype=np.float64), params, (2, 2, 2))
        after = da_sa2(Tensor(changed, dtype=np.float64), params, (2, 2, 2))

        assert_allclose(after.tokens.data[:, :2], before.tokens.data[:, :2])
        assert_allclose(after.tokens.data[:, 4:], before.tokens.data[:, 4:])
        self.assertFalse(
            np.allclose(after.tokens.data[:, 2:4], before.tokens.data[:, 2:4])
        )

    def test_shifted_mask_blocks_other_regions(self) -> None:
        """Give masked pairs numerically zero weight."""
        params = AttentionParams(self.rng, 4, 2, (4, 4, 2), dtype=np.float64)
        x = Tensor(self.rng.standard_normal((9, 10, 5, 4)), dtype=np.float64)
        part = window_partition(x, WindowSpec((4, 4, 2), shifted=True))
        assert part.mask is not None

        weights = da_sa1(part.windows, params, part.layout.window, part.mask).weights

        blocked = np.broadcast_to(part.mask[:, None] < 0, weights.shape)
        self.assertLessEqual(float(weights[blocked].max()), 1e-7)


class LayerTests(unittest.TestCase):
    """Validate the regular and shifted transformer layers."""

    def setUp(self) -> None:
        """Draw a token grid."""
        self.rng = np.random.default_rng(9)
        self.x = Tensor(self.rng.standard_normal((6, 5, 4, 8)), dtype=np.float64)

    def test_fresh_layer_is_identity(self) -> None:
        """Return the input exactly while both residual branches are zero."""
        layer = DatlParams(self.rng, 8, 2, (4, 4, 2), dtype=np.float64)

        regular = datl_forward(self.x, layer, WindowSpec((4, 4, 2)))
        shifted = dastl_forward(self.x, layer, WindowSpec((4, 4, 2), True))

        assert_array_equal(regular.data, self.x.data)
        assert_array_equal(shifted.data, self.x.data)

    def test_trained_layer_matches_loop_oracle(self) -> None:
        """Compose fibre attention, window attention and the MLP exactly."""
        layer = DatlParams(self.rng, 8, 2, (2, 2, 2), dtype=np.float64)
        for param in layer.parameters():
            param.assign(self.rng.normal(0.0, 0.3, param.shape))
        x = self.rng.standard_normal((4, 4, 2, 8))

        out = datl_forward(Tensor(x, dtype=np.float64), layer, WindowSpec((2, 2, 2)))

        assert_allclose(out.data, layer_loop(x, layer), atol=1e-10)

    def test_shifted_layer_on_a_single_window(self) -> None:
        """Match the regular layer when the volume fits in one window."""
        layer = DatlParams(self.rng, 8, 2, (4, 4, 2), dtype=np.float64)
        for param in layer.parameters():
            param.assign(self.rng.normal(0.0, 0.3, param.shape))
        x = Tensor(self.rng.standard_normal((3, 3, 2, 8)), dtype=np.float64)

        shifted = dastl_forward(x, layer, WindowSpec((4, 4, 2), True))
        regular = datl_forward(x, layer, WindowSpec((4, 4, 2)))

        assert_allclose(shifted.data, regular.data, atol=1e-12)
        self.assertFalse(np.allclose(shifted.data, x.data))

    def test_shift_flag_must_match_layer_kind(self) -> None:
        """Refuse a regular spec for a shifted layer and the reverse."""
        layer = DatlParams(self.rng, 8, 2, (4, 4, 2), dtype=np.float64)

        with self.assertRaises(DomainError):
            datl_forward(self.x, layer, WindowSpec((4, 4, 2), True))
        with self.assertRaises(DomainError):
            dastl_forward(self.x, layer, WindowSpec((4, 4, 2)))

    def test_spatial_variant_on_two_axes(self) -> None:
        """Run the spatial-only variant over an ``(H, W)`` grid."""
        layer = DatlParams(
            self.rng, 8, 2, (4, 4), AttentionVariant.SPATIAL, dtype=np.float64
        )
        layer.fc2.weight.assign(self.rng.normal(0.0, 0.1, layer.fc2.weight.shape))
        x = Tensor(self.rng.standard_normal((6, 5, 8)), dtype=np.float64)

        out = dastl_forward(x, layer, WindowSpec((4, 4), True))

        self.assertEqual(out.shape, (6, 5, 8))
        self.assertFalse(np.allclose(out.data, x.data))

    def test_depth_variant_needs_three_axes(self) -> None:
        """Refuse a 2-D window for depth attention."""
        with self.assertRaises(DomainError):
            DatlParams(self.rng, 8, 2, (4, 4))
