"""Tests for soft argmin, the losses and the metrics."""

from __future__ import annotations

import unittest

import numpy as np
from numpy.testing import assert_allclose

from Costformer.cost_volume import AggregatedCost
from Costformer.errors import DomainError, ShapeError
from Costformer.geometry import generate_hypotheses, recenter_hypotheses
from Costformer.regression import (
    LossTerms,
    downsample_nearest,
    evaluate_depth,
    inverse_depth_loss,
    loss_objective,
    soft_argmin,
    stage_loss,
    total_loss,
)
from Costformer.tensor_core import Parameter, Tensor


class SoftArgminTests(unittest.TestCase):
    """Validate depth regression from costs."""

    def setUp(self) -> None:
        """Create a shared sweep."""
        self.hyps = generate_hypotheses(2.0, 6.0, 4, mode="linear", dtype=np.float64)

    def test_peaked_cost_picks_hypothesis(self) -> None:
        """Return the hypothesis whose cost dominates."""
        cost = np.full((2, 2, 4), -50.0)
        cost[..., 2] = 50.0

        depth = soft_argmin(AggregatedCost(Tensor(cost, dtype=np.float64)), self.hyps)

        assert_allclose(depth.data, np.full((2, 2), self.hyps.values.data[2]))

    def test_flat_cost_gives_mean(self) -> None:
        """Average the hypotheses when every cost is equal."""
        cost = AggregatedCost(Tensor(np.zeros((3, 2, 4)), dtype=np.float64))

        depth = soft_argmin(cost, self.hyps)

        assert_allclose(depth.data, np.full((3, 2), 4.0))

    def test_per_pixel_hypotheses(self) -> None:
        """Use each pixel's own hypotheses."""
        prior = np.array([[3.0, 5.0]])
        hyps = recenter_hypotheses(prior, 4, 2.0, 6.0, 0.02, dtype=np.float64)
        cost = AggregatedCost(Tensor(np.zeros((1, 2, 4)), dtype=np.float64))

        depth = soft_argmin(cost, hyps)

        assert_allclose(depth.data, hyps.values.data.mean(axis=-1))

    def test_output_stays_in_range(self) -> None:
        """Stay inside the sweep for arbitrary costs."""
        cost = np.random.default_rng(0).normal(0.0, 10.0, (4, 4, 4))

        depth = soft_argmin(AggregatedCost(Tensor(cost, dtype=np.float64)), self.hyps)

        self.assertTrue((depth.data >= 2.0).all() and (depth.data <= 6.0).all())

    def test_adding_a_constant_keeps_the_depth(self) -> None:
        """Ignore a shift of every cost along depth."""
        cost = np.random.default_rng(1).normal(0.0, 2.0, (3, 4, 4))

        depth = soft_argmin(AggregatedCost(Tensor(cost, dtype=np.float64)), self.hyps)
        shifted = soft_argmin(
            AggregatedCost(Tensor(cost + 17.0, dtype=np.float64)), self.hyps
        )

        assert_allclose(shifted.data, depth.data, atol=1e-6)

    def test_count_must_match(self) -> None:
        """Refuse hypotheses of another depth."""
        cost = AggregatedCost(Tensor(np.zeros((2, 2, 3))))

        with self.assertRaises(ShapeError):
            soft_argmin(cost, self.hyps)


class LossTests(unittest.TestCase):
    """Validate the regression losses."""

    def test_stage_loss_is_masked_mean(self) -> None:
        """Average smooth-L1 over valid pixels only."""
        pred = Tensor(np.array([[0.5, 3.0], [9.0, 0.0]]), dtype=np.float64)
        gt = Tensor(np.zeros((2, 2)), dtype=np.float64)
        valid = np.array([[True, True], [False, True]])

        loss = stage_loss(pred, gt, valid)

        assert_allclose(loss.item(), (0.125 + 2.5 + 0.0) / 3)

    def test_no_valid_pixel_gives_zero(self) -> None:
        """Return 0 when the mask is empty."""
        pred = Tensor(np.ones((2, 2)))

        loss = stage_loss(pred, Tensor(np.zeros((2, 2))), np.zeros((2, 2), bool))

        self.assertEqual(loss.item(), 0.0)

    def test_inverse_depth_loss_of_exact_prediction(self) -> None:
        """Vanish for a perfect prediction and skip invalid truth."""
        gt = np.array([[2.0, 4.0], [np.inf, 0.0]])
        pred = Parameter(np.array([[2.0, 4.0], [3.0, 3.0]]), dtype=np.float64)

        loss = inverse_depth_loss(pred, gt, np.isfinite(gt))
        loss.backward()

        self.assertEqual(loss.item(), 0.0)
        self.assertTrue(np.isfinite(pred.grad).all())

    def test_downsample_takes_strided_pixels(self) -> None:
        """Keep every ``scale``-th row and column."""
        depth = np.arange(16.0).reshape(4, 4)

        assert_allclose(downsample_nearest(depth, 2), [[0.0, 2.0], [8.0, 10.0]])

    def test_downsample_rejects_zero_scale(self) -> None:
        """Refuse scales below one."""
        with self.assertRaises(DomainError):
            downsample_nearest(np.zeros((2, 2)), 0)

    def test_total_loss_sums_every_iteration(self) -> None:
        """Add iteration losses over stages with unit weights."""
        terms = LossTerms()
        terms.add(1, Tensor(2.0, dtype=np.float64))
        terms.add(0, Tensor(1.0, dtype=np.float64))
        terms.add(1, 0.5)

        self.assertEqual(len(terms.per_stage_per_iter), 2)
        assert_allclose(terms.stage_totals(), [1.0, 2.5])
        self.assertEqual(total_loss(terms), 3.5)
        assert_allclose(float(loss_objective(terms).item()), 3.5)

    def test_total_loss_adds_in_double_precision(self) -> None:
        """Keep a unit term next to a large single-precision one."""
        terms = LossTerms()
        terms.add(0, Tensor(np.float32(1e8)))
        terms.add(1, Tensor(np.float32(1.0)))

        total = total_loss(terms)

        self.assertIsInstance(total, float)
        self.assertEqual(total, 100000001.0)

    def test_total_loss_ignores_term_order(self) -> None:
        """Give the same sum for permuted terms."""
        self.assertEqual(
            total_loss([[0.1, 0.2], [0.3]]), total_loss([[0.3], [0.2, 0.1]])
        )

    def test_total_loss_of_plain_lists(self) -> None:
        """Accept nested lists of floats."""
        self.assertEqual(total_loss([[1.0, 2.0], [0.5]]), 3.5)


class MetricTests(unittest.TestCase):
    """Validate the depth metrics."""

    def test_known_errors(self) -> None:
        """Measure errors in units of the interval."""
        gt = np.array([[2.0, 4.0], [5.0, 6.0]])
        pred = np.array([[2.0, 4.5], [3.0, 6.0]])

        metrics = evaluate_depth(pred, gt, None, 0.4)

        self.assertEqual(metrics["valid_pixels"], 4)
        assert_allclose(metrics["abs_depth"], 2.5 / 4)
        assert_allclose(metrics["epe"], (0.5 + 2.0) / 0.4 / 4)
        assert_allclose(metrics["e1"], 0.5)
        assert_allclose(metrics["e3"], 0.25)

    def test_mask_and_invalid_truth(self) -> None:
        """Skip masked pixels and non-finite truth."""
        gt = np.array([[2.0, np.nan], [5.0, 6.0]])
        pred = np.array([[2.5, 4.0], [9.0, 6.0]])
        mask = np.array([[True, True], [False, True]])

        metrics = evaluate_depth(pred, gt, mask, 1.0)

        self.assertEqual(metrics["valid_pixels"], 2)
        assert_allclose(metrics["abs_depth"], 0.25)

    def test_empty_gives_zeros(self) -> None:
        """Report zero errors when nothing is valid."""
        metrics = evaluate_depth(np.ones((2, 2)), np.zeros((2, 2)), None, 1.0)

        self.assertEqual(metrics["valid_pixels"], 0)
        self.assertEqual(metrics["epe"], 0.0)

    def test_rejects_bad_interval(self) -> None:
        """Refuse a non-positive interval."""
        with self.assertRaises(DomainError):
            evaluate_depth(np.ones((2, 2)), np.ones((2, 2)), None, 0.0)
