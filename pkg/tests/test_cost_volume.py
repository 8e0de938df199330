"""Tests for correlation, view fusion and spatial aggregation."""

from __future__ import annotations

import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from scipy import ndimage

from Costformer.cost_volume import (
    AggregatedCost,
    CostVolume,
    SpatialWindowParams,
    adaptive_spatial_aggregate,
    fuse_views,
    grid_offsets,
    groupwise_correlation,
    reduce_groups,
    view_weights_from_costs,
)
from Costformer.errors import DomainError, ShapeError
from Costformer.geometry import generate_hypotheses, recenter_hypotheses
from Costformer.tensor_core import Tensor, check_parameter_gradients
from Costformer.tensor_core.gradcheck import KINKED_EPS
from Costformer.tensor_core.nn import init_linear


def correlation_loop(ref: np.ndarray, warped: np.ndarray, groups: int) -> np.ndarray:
    """Group-wise correlation written as explicit loops."""
    height, width, depth, channels = warped.shape
    per_group = channels // groups
    out = np.zeros((height, width, depth, groups))
    for i in range(height):
        for j in range(width):
            for d in range(depth):
                for g in range(groups):
                    span = slice(g * per_group, (g + 1) * per_group)
                    out[i, j, d, g] = ref[i, j, span] @ warped[i, j, d, span]
    return out / per_group


def spatial_aggregate_loop(
    cost: np.ndarray,
    features: np.ndarray,
    inverse: np.ndarray,
    params: SpatialWindowParams,
) -> np.ndarray:
    """Grid-only aggregation written per pixel and per sample."""
    height, width, depth = cost.shape
    channels = features.shape[2]
    first, second = params.weight_net
    out = np.zeros_like(cost)
    for i in range(height):
        for j in range(width):
            total = np.zeros(depth)
            weight_sum = np.zeros(depth)
            for dx, dy in params.offsets_base.astype(int):
                y, x = i + dy, j + dx
                if not (0 <= y < height and 0 <= x < width):
                    continue
                product = features[i, j] * features[y, x]
                similarity = product.reshape(params.groups, -1).sum(axis=1)
                similarity *= params.groups / channels
                hidden = np.maximum(
                    similarity @ first.weight.data + first.bias.data, 0.0
                )
                logit = (hidden @ second.weight.data + second.bias.data)[0]
                w = 1.0 / (1.0 + np.exp(-logit))
                gap = np.abs(inverse[y, x] - inverse[i, j]) / params.temperature
                weight = w / (1.0 + np.exp(gap))
                total += weight * cost[y, x]
                weight_sum += weight
            out[i, j] = total / weight_sum
    return out


class CorrelationTests(unittest.TestCase):
    """Validate group-wise correlation and view fusion."""

    def setUp(self) -> None:
        """Draw reference and warped features."""
        rng = np.random.default_rng(11)
        self.ref = rng.standard_normal((3, 4, 8))
        self.warped = rng.standard_normal((3, 4, 5, 8))

    def test_matches_loop_oracle(self) -> None:
        """Agree with the explicit per-group inner products."""
        cv = groupwise_correlation(
            Tensor(self.ref, dtype=np.float64),
            Tensor(self.warped, dtype=np.float64),
            None,
            4,
        )

        self.assertEqual(cv.shape, (3, 4, 5, 4))
        assert_allclose(cv.cost.data, correlation_loop(self.ref, self.warped, 4))

    def test_mask_zeroes_entries(self) -> None:
        """Zero the cost of samples outside the source image."""
        mask = np.ones((3, 4, 5), dtype=bool)
        mask[0, 0, :] = False

        cv = groupwise_correlation(
            Tensor(self.ref), Tensor(self.warped), mask, 2
        )

        assert_array_equal(cv.cost.data[0, 0], np.zeros((5, 2)))

    def test_groups_must_divide_channels(self) -> None:
        """Refuse a group count that does not divide the channels."""
        with self.assertRaises(ShapeError):
            groupwise_correlation(Tensor(self.ref), Tensor(self.warped), None, 3)

    def test_swapping_reference_and_warped_keeps_the_cost(self) -> None:
        """Give the same correlation with the two feature maps exchanged."""
        warped = self.warped[:, :, :1]

        forward = groupwise_correlation(
            Tensor(self.ref, dtype=np.float64),
            Tensor(warped, dtype=np.float64),
            None,
            4,
        )
        swapped = groupwise_correlation(
            Tensor(warped[:, :, 0], dtype=np.float64),
            Tensor(self.ref[:, :, None], dtype=np.float64),
            None,
            4,
        )

        assert_allclose(forward.cost.data, swapped.cost.data, atol=1e-12)

    def test_rescaled_weights_give_the_same_fusion(self) -> None:
        """Ignore a common positive factor on every view weight."""
        rng = np.random.default_rng(13)
        views = [
            CostVolume(
                Tensor(rng.standard_normal((3, 4, 5, 2)), dtype=np.float64), 2, 4
            )
            for _ in range(3)
        ]
        weights = rng.uniform(0.1, 1.0, (3, 3, 4))

        fused = fuse_views(views, Tensor(weights, dtype=np.float64))
        rescaled = fuse_views(views, Tensor(7.5 * weights, dtype=np.float64))

        assert_allclose(fused.cost.data, rescaled.cost.data, atol=1e-6)

    def test_view_weights_normalize_over_views(self) -> None:
        """Sum the pixel-wise weights to one without a gradient."""
        costs = [
            groupwise_correlation(
                Tensor(self.ref), Tensor(self.warped * scale), None, 4
            )
            for scale in (1.0, -0.5, 2.0)
        ]

        weights = view_weights_from_costs(costs)

        self.assertEqual(weights.shape, (3, 3, 4))
        assert_allclose(weights.data.sum(axis=0), np.ones((3, 4)), rtol=1e-6)
        self.assertFalse(weights.requires_grad)

    def test_equal_weights_give_the_mean(self) -> None:
        """Average the views when every weight is the same."""
        first = CostVolume(Tensor(np.ones((2, 2, 3, 2))), 2, 4)
        second = CostVolume(Tensor(np.full((2, 2, 3, 2), 3.0)), 2, 4)

        fused = fuse_views([first, second], Tensor(np.full((2, 2, 2), 0.7)))

        assert_allclose(fused.cost.data, np.full((2, 2, 3, 2), 2.0), rtol=1e-6)

    def test_negative_weights_are_rejected(self) -> None:
        """Refuse weights below zero."""
        cv = CostVolume(Tensor(np.ones((2, 2, 3, 2))), 2, 4)

        with self.assertRaises(DomainError):
            fuse_views([cv], Tensor(np.full((1, 2, 2), -1.0)))

    def test_reduce_groups_shape(self) -> None:
        """Collapse groups to one cost per voxel."""
        rng = np.random.default_rng(0)
        cv = CostVolume(Tensor(rng.standard_normal((3, 4, 5, 4))), 4, 8)
        layers = [init_linear(rng, 4, 4), init_linear(rng, 4, 1)]

        self.assertEqual(reduce_groups(cv, layers).shape, (3, 4, 5))

    def test_reduce_groups_checks_widths(self) -> None:
        """Refuse a stack that does not map groups to one value."""
        rng = np.random.default_rng(0)
        cv = CostVolume(Tensor(np.zeros((2, 2, 2, 4))), 4, 8)

        with self.assertRaises(ShapeError):
            reduce_groups(cv, [init_linear(rng, 4, 2)])


class SpatialAggregationTests(unittest.TestCase):
    """Validate the adaptive spatial aggregation."""

    def setUp(self) -> None:
        """Build a block and matching inputs."""
        rng = np.random.default_rng(4)
        self.params = SpatialWindowParams(8, 4, kernel=3, seed=0, dtype=np.float64)
        self.features = Tensor(rng.standard_normal((5, 6, 8)), dtype=np.float64)
        self.hyps = generate_hypotheses(2.0, 6.0, 3, dtype=np.float64)

    def test_grid_offsets(self) -> None:
        """List the square window with the centre in the middle."""
        offsets = grid_offsets(3)

        self.assertEqual(offsets.shape, (9, 2))
        assert_array_equal(offsets[4], [0.0, 0.0])
        assert_array_equal(offsets[0], [-1.0, -1.0])

    def test_even_kernel_is_rejected(self) -> None:
        """Refuse windows without a centre."""
        with self.assertRaises(DomainError):
            grid_offsets(4)

    def test_offsets_start_at_zero(self) -> None:
        """Begin as a plain grid."""
        assert_array_equal(self.params.offset_proj.weight.data, np.zeros((8, 18)))

    def test_spatially_constant_cost_is_unchanged(self) -> None:
        """Keep a cost that only varies along depth."""
        profile = np.array([0.3, -1.2, 2.0])
        cost = AggregatedCost(
            Tensor(np.broadcast_to(profile, (5, 6, 3)), dtype=np.float64)
        )

        out = adaptive_spatial_aggregate(cost, self.params, self.features, self.hyps)

        assert_allclose(out.cost.data, np.broadcast_to(profile, (5, 6, 3)))

    def test_matches_loop_oracle(self) -> None:
        """Agree with per-pixel weighting under per-pixel hypotheses."""
        rng = np.random.default_rng(12)
        prior = rng.uniform(3.0, 5.0, (5, 6))
        hyps = recenter_hypotheses(prior, 3, 2.0, 6.0, 0.05, dtype=np.float64)
        cost = rng.standard_normal((5, 6, 3))

        out = adaptive_spatial_aggregate(
            AggregatedCost(Tensor(cost, dtype=np.float64)),
            self.params,
            self.features,
            hyps,
        )

        expected = spatial_aggregate_loop(
            cost, self.features.data, 1.0 / hyps.values.data, self.params
        )
        assert_allclose(out.cost.data, expected, atol=1e-5)

    def test_output_stays_within_the_window_costs(self) -> None:
        """Blend each pixel's cost between its neighbourhood extremes."""
        cost = np.random.default_rng(14).standard_normal((5, 6, 3))

        out = adaptive_spatial_aggregate(
            AggregatedCost(Tensor(cost, dtype=np.float64)),
            self.params,
            self.features,
            self.hyps,
        ).cost.data

        low = ndimage.minimum_filter(cost, size=(3, 3, 1), mode="nearest")
        high = ndimage.maximum_filter(cost, size=(3, 3, 1), mode="nearest")
        self.assertTrue((out >= low - 1e-12).all())
        self.assertTrue((out <= high + 1e-12).all())

    def test_offset_gradients_under_per_pixel_hypotheses(self) -> None:
        """Route the depth weight's gradient back to the learned offsets."""
        rng = np.random.default_rng(15)
        for param in self.params.parameters():
            param.assign(rng.normal(0.0, 0.3, param.shape))
        prior = rng.uniform(3.0, 5.0, (5, 6))
        hyps = recenter_hypotheses(prior, 3, 2.0, 6.0, 0.05, dtype=np.float64)
        cost = AggregatedCost(
            Tensor(rng.standard_normal((5, 6, 3)), dtype=np.float64)
        )
        weights = Tensor(rng.standard_normal((5, 6, 3)), dtype=np.float64)

        report = check_parameter_gradients(
            lambda: (
                adaptive_spatial_aggregate(cost, self.params, self.features, hyps)
                .cost
                * weights
            ).sum(),
            {
                "weight": self.params.offset_proj.weight,
                "bias": self.params.offset_proj.bias,
            },
            eps=KINKED_EPS,
        )

        self.assertTrue(report.passed(1e-3), report)

    def test_hypothesis_count_must_match(self) -> None:
        """Refuse hypotheses of another depth."""
        cost = AggregatedCost(Tensor(np.zeros((5, 6, 4)), dtype=np.float64))

        with self.assertRaises(ShapeError):
            adaptive_spatial_aggregate(cost, self.params, self.features, self.hyps)
