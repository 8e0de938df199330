"""Tests for the gradient suites and the fast self-test."""

from __future__ import annotations

import unittest

from Costformer.errors import DomainError
from Costformer.pipeline.selftest import (
    gradient_suite,
    gradient_tolerance,
    run_selftest,
)


class GradientSuiteTests(unittest.TestCase):
    """Validate analytic gradients against central differences."""

    def assert_suite_passes(self, component: str) -> None:
        """Check every report of ``component`` against its tolerance."""
        reports = gradient_suite(component, seed=0)

        self.assertTrue(reports)
        for name, report in reports.items():
            with self.subTest(check=name):
                self.assertTrue(
                    report.passed(gradient_tolerance(component)),
                    f"{name}: relative error {report.max_rel_error:.2e}",
                )

    def test_primitive_ops(self) -> None:
        """Pass for the primitive operations."""
        self.assert_suite_passes("ops")

    def test_cost_volume_ops(self) -> None:
        """Pass for fusion, group reduction and offset-based aggregation."""
        reports = gradient_suite("cost_volume", seed=0)

        self.assertIn("adaptive_spatial_aggregate.params", reports)
        self.assertIn("fuse_views", reports)
        self.assert_suite_passes("cost_volume")

    def test_depth_aware_transformer(self) -> None:
        """Pass for a depth-aware cost transformer stage."""
        self.assert_suite_passes("rdact")

    def test_soft_argmin(self) -> None:
        """Pass for depth regression."""
        self.assert_suite_passes("soft_argmin")

    def test_regression_transformer(self) -> None:
        """Pass for a regression transformer block."""
        self.assert_suite_passes("rrt")

    def test_pipeline_is_looser(self) -> None:
        """Allow the whole pipeline a wider bound."""
        self.assertGreater(gradient_tolerance("pipeline"), gradient_tolerance("ops"))

    def test_unknown_component(self) -> None:
        """Refuse components without a suite."""
        with self.assertRaises(DomainError):
            gradient_suite("decoder")


class SelftestTests(unittest.TestCase):
    """Validate the fast self-test."""

    def test_fast_checks_pass(self) -> None:
        """Pass every structural check without training."""
        results = run_selftest(seed=0)

        names = [result.name for result in results]
        self.assertIn("plug-in identity", names)
        self.assertIn("bias table coverage", names)
        failed = [result for result in results if not result.passed]
        self.assertEqual(failed, [])
