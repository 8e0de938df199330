"""Tests for cameras, plane-sweep warping and depth hypotheses."""

from __future__ import annotations

import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from scipy.spatial.transform import Rotation

from Costformer.errors import DomainError, ShapeError
from Costformer.geometry import (
    CameraView,
    DepthHypotheses,
    generate_hypotheses,
    pixel_grid,
    recenter_hypotheses,
    refinement_width,
    warp_feature_volume,
    warp_pixel,
)
from Costformer.tensor_core import Tensor

K = np.array([[20.0, 0.0, 7.5], [0.0, 20.0, 5.5], [0.0, 0.0, 1.0]])


def project(pixel: tuple[float, float], depth: float, src: CameraView) -> np.ndarray:
    """Back-project a reference pixel and project it into ``src``."""
    point = depth * np.linalg.inv(K) @ np.array([pixel[0], pixel[1], 1.0])
    image = src.K @ (src.R @ point + src.t)
    return image[:2] / image[2]


class CameraViewTests(unittest.TestCase):
    """Validate camera construction and derived quantities."""

    def test_rejects_non_rotation(self) -> None:
        """Refuse a scaled matrix as the rotation."""
        with self.assertRaises(DomainError):
            CameraView(K=K, R=2.0 * np.eye(3), t=np.zeros(3))

    def test_rejects_lower_triangular_intrinsics(self) -> None:
        """Refuse intrinsics with entries below the diagonal."""
        bad = K.copy()
        bad[1, 0] = 1.0

        with self.assertRaises(DomainError):
            CameraView(K=bad, R=np.eye(3), t=np.zeros(3))

    def test_rejects_wrong_shapes(self) -> None:
        """Refuse a translation that is not a 3-vector."""
        with self.assertRaises(ShapeError):
            CameraView(K=K, R=np.eye(3), t=np.zeros(2))

    def test_center_inverts_translation(self) -> None:
        """Recover the centre used to build ``t = -R c``."""
        R = Rotation.from_rotvec([0.01, -0.02, 0.03]).as_matrix()
        center = np.array([0.3, -0.1, 0.05])

        view = CameraView(K=K, R=R, t=-R @ center)

        assert_allclose(view.center, center, atol=1e-12)

    def test_scaled_intrinsics(self) -> None:
        """Halve focal lengths and principal point for half resolution."""
        view = CameraView.reference(K).scaled(0.5)

        assert_allclose(view.K, [[10.0, 0.0, 3.75], [0.0, 10.0, 2.75], [0, 0, 1]])


class WarpingTests(unittest.TestCase):
    """Validate warping against direct projection."""

    def setUp(self) -> None:
        """Build a source camera with a small rotation and baseline."""
        R = Rotation.from_rotvec([0.02, -0.01, 0.015]).as_matrix()
        self.src = CameraView(K=K, R=R, t=-R @ np.array([0.25, 0.02, -0.03]))

    def test_warp_pixel_matches_projection(self) -> None:
        """Agree with back-projection followed by projection."""
        for pixel, depth in (((3.0, 4.0), 2.5), ((10.2, 1.7), 5.0)):
            warped = warp_pixel(pixel, depth, K, self.src)

            self.assertTrue(warped.valid)
            assert_allclose(warped.xy, project(pixel, depth, self.src), atol=1e-9)

    def test_identity_source_maps_pixel_to_itself(self) -> None:
        """Leave pixels in place when the source is the reference."""
        warped = warp_pixel((5.0, 3.0), 4.0, K, CameraView.reference(K))

        assert_allclose(warped.xy, [5.0, 3.0], atol=1e-9)

    def test_point_behind_source_is_invalid(self) -> None:
        """Flag points that project behind the source camera."""
        behind = CameraView(K=K, R=np.eye(3), t=np.array([0.0, 0.0, -10.0]))

        self.assertFalse(warp_pixel((5.0, 3.0), 2.0, K, behind).valid)

    def test_pixel_grid_is_row_major(self) -> None:
        """Enumerate ``(x, y)`` with x varying fastest."""
        assert_array_equal(
            pixel_grid(2, 3),
            [[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1]],
        )

    def test_feature_volume_of_identity_source(self) -> None:
        """Reproduce the reference features at every hypothesis."""
        rng = np.random.default_rng(0)
        features = Tensor(rng.standard_normal((12, 16, 4)), dtype=np.float64)
        ref = CameraView.reference(K, features)
        hyps = generate_hypotheses(2.0, 6.0, 3, dtype=np.float64)

        warped = warp_feature_volume(ref, hyps, ref)

        self.assertEqual(warped.values.shape, (12, 16, 3, 4))
        interior = warped.values.data[1:-1, 1:-1]
        expected = np.broadcast_to(features.data[1:-1, 1:-1, None], interior.shape)
        assert_allclose(interior, expected, atol=1e-8)
        self.assertTrue(warped.mask[1:-1, 1:-1].all())

    def test_feature_volume_matches_sampled_projection(self) -> None:
        """Sample the source map where the pixel projects at each depth."""
        rng = np.random.default_rng(1)
        features = Tensor(rng.standard_normal((12, 16, 2)), dtype=np.float64)
        ref = CameraView.reference(K, features)
        src = self.src.with_features(features)
        hyps = generate_hypotheses(2.0, 6.0, 4, dtype=np.float64)

        warped = warp_feature_volume(src, hyps, ref)

        for depth_index, depth in enumerate(hyps.values.data):
            x, y = project((7.0, 5.0), float(depth), src)
            x0, y0 = int(np.floor(x)), int(np.floor(y))
            ax, ay = x - x0, y - y0
            f = features.data
            expected = (
                (1 - ax) * (1 - ay) * f[y0, x0]
                + ax * (1 - ay) * f[y0, x0 + 1]
                + (1 - ax) * ay * f[y0 + 1, x0]
                + ax * ay * f[y0 + 1, x0 + 1]
            )
            assert_allclose(warped.values.data[5, 7, depth_index], expected, atol=1e-8)

    def test_feature_volume_needs_features(self) -> None:
        """Refuse a source without a feature map."""
        ref = CameraView.reference(K, Tensor(np.zeros((4, 4, 1))))
        hyps = generate_hypotheses(2.0, 6.0, 2)

        with self.assertRaises(ShapeError):
            warp_feature_volume(self.src, hyps, ref)


class HypothesisTests(unittest.TestCase):
    """Validate global sweeps and re-centred windows."""

    def test_inverse_depth_sweep(self) -> None:
        """Space hypotheses evenly in inverse depth, endpoints included."""
        hyps = generate_hypotheses(2.0, 6.0, 5, dtype=np.float64)
        values = hyps.values.data

        assert_allclose(values[[0, -1]], [2.0, 6.0])
        self.assertTrue((np.diff(values) > 0).all())
        assert_allclose(np.diff(1.0 / values), np.full(4, (1 / 6 - 1 / 2) / 4))

    def test_linear_sweep(self) -> None:
        """Space hypotheses evenly in depth in linear mode."""
        hyps = generate_hypotheses(2.0, 6.0, 5, mode="linear", dtype=np.float64)

        assert_allclose(hyps.values.data, [2.0, 3.0, 4.0, 5.0, 6.0])

    def test_single_hypothesis_is_midpoint(self) -> None:
        """Place one hypothesis at the inverse-depth midpoint."""
        hyps = generate_hypotheses(2.0, 6.0, 1, dtype=np.float64)

        assert_allclose(hyps.values.data, [3.0])

    def test_invalid_range(self) -> None:
        """Refuse empty and non-positive ranges."""
        for d_min, d_max in ((6.0, 2.0), (0.0, 1.0), (2.0, 2.0)):
            with self.assertRaises(DomainError):
                generate_hypotheses(d_min, d_max, 4)

    def test_hypotheses_must_increase(self) -> None:
        """Refuse unordered values."""
        with self.assertRaises(DomainError):
            DepthHypotheses(Tensor(np.array([3.0, 2.0])))

    def test_refinement_width_halves(self) -> None:
        """Start at half the inverse range and halve per stage."""
        first = refinement_width(2.0, 6.0, 0)

        assert_allclose(first, (0.5 - 1 / 6) / 2)
        assert_allclose(refinement_width(2.0, 6.0, 1), first / 2)

    def test_recenter_around_prior(self) -> None:
        """Centre each pixel's window on its prior in inverse depth."""
        prior = np.full((2, 3), 4.0)
        width = 0.05

        hyps = recenter_hypotheses(prior, 5, 2.0, 6.0, width, dtype=np.float64)
        inverse = 1.0 / hyps.values.data

        self.assertTrue(hyps.per_pixel)
        self.assertEqual(hyps.values.shape, (2, 3, 5))
        assert_allclose(inverse.mean(axis=-1), np.full((2, 3), 0.25))
        assert_allclose(inverse[..., 0] - inverse[..., -1], np.full((2, 3), width))

    def test_recenter_slides_inside_range(self) -> None:
        """Keep windows near the range border inside it."""
        prior = np.array([[2.0, 6.0]])
        width = 0.1

        hyps = recenter_hypotheses(prior, 3, 2.0, 6.0, width, dtype=np.float64)
        values = hyps.values.data

        self.assertTrue((values >= 2.0 - 1e-12).all())
        self.assertTrue((values <= 6.0 + 1e-12).all())
        assert_allclose(values[0, 0, 0], 2.0)
        assert_allclose(values[0, 1, -1], 6.0)
