"""Differentiable plane-sweep warping of source features into the reference."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from Costformer.errors import ShapeError
from Costformer.geometry.camera import CameraView
from Costformer.geometry.hypotheses import DepthHypotheses
from Costformer.tensor_core import Tensor, bilinear_sample, stack, where

MIN_PROJECTED_DEPTH = 1e-9


class WarpedPixel(NamedTuple):
    """Continuous source position of one reference pixel."""

    xy: np.ndarray
    valid: bool


class WarpedPoints(NamedTuple):
    """Source positions ``[N, 2]`` with per-point validity."""

    coords: Tensor
    valid: np.ndarray


class WarpedVolume(NamedTuple):
    """Source features resampled on the reference grid at every depth."""

    values: Tensor
    mask: np.ndarray


def _ray_terms(
    pixels: np.ndarray, ref_K: np.ndarray, src: CameraView
) -> tuple[np.ndarray, np.ndarray]:
    """Split ``K_i (R (K_0^-1 p d) + t)`` into ``d * a + b``."""
    homogeneous = np.concatenate([pixels, np.ones((len(pixels), 1))], axis=1)
    rays = homogeneous @ np.linalg.inv(ref_K).T
    a = rays @ (src.K @ src.R).T
    b = np.broadcast_to(src.K @ src.t, a.shape)
    return a, b


def warp_pixel(
    pixel: tuple[float, float], depth: float, ref_K: np.ndarray, src: CameraView
) -> WarpedPixel:
    """Project reference pixel ``(x, y)`` at ``depth`` into ``src``.

    Validity is false when the point lands behind the source camera. Bounds
    are checked only when ``src`` carries features to define them.
    """
    a, b = _ray_terms(np.array([pixel], dtype=np.float64), ref_K, src)
    h = depth * a[0] + b[0]
    if h[2] <= MIN_PROJECTED_DEPTH:
        return WarpedPixel(np.array([np.nan, np.nan]), False)
    xy = h[:2] / h[2]
    valid = True
    if src.features is not None:
        height, width = src.features.shape[:2]
        valid = bool(0 <= xy[0] <= width - 1 and 0 <= xy[1] <= height - 1)
    return WarpedPixel(xy, valid)


def warp_points(
    pixels: np.ndarray, depths: Tensor, ref_K: np.ndarray, src: CameraView
) -> WarpedPoints:
    """Project many reference pixels, differentiably in their depths."""
    if depths.shape != (len(pixels),):
        raise ShapeError(f"need one depth per pixel, got {depths.shape}")
    a, b = _ray_terms(pixels, ref_K, src)
    dtype = depths.dtype
    d = depths.reshape(-1, 1)
    h = d * a.astype(dtype) + b.astype(dtype)
    z = h[:, 2]
    valid = z.data > MIN_PROJECTED_DEPTH
    safe_z = where(valid, z, Tensor(np.ones(len(pixels)), dtype=dtype))
    coords = stack([h[:, 0] / safe_z, h[:, 1] / safe_z], axis=1)
    # behind-camera points must sample nothing, not the unscaled ray
    missing = Tensor(np.full((len(pixels), 2), np.nan), dtype=dtype)
    coords = where(valid[:, None], coords, missing)
    return WarpedPoints(coords, valid)


def pixel_grid(height: int, width: int) -> np.ndarray:
    """Return ``[H * W, 2]`` pixel centres as ``(x, y)`` in row-major order."""
    ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1).astype(np.float64)


def warp_feature_volume(
    src: CameraView, hyps: DepthHypotheses, ref: CameraView
) -> WarpedVolume:
    """Resample ``src.features`` at every reference pixel and hypothesis.

    Returns ``[H, W, D, C]`` values on the reference grid and an
    ``[H, W, D]`` mask that is false where the sample left the source image
    or fell behind the camera; those samples are zero.
    """
    if src.features is None:
        raise ShapeError("source view carries no features")
    if ref.features is None:
        raise ShapeError("reference view carries no features")
    height, width = ref.features.shape[:2]
    count = hyps.count
    channels = src.features.shape[2]
    depths = hyps.values
    if depths.ndim == 1:
        depths = depths.reshape(1, 1, count)
        depths = depths.broadcast_to((height, width, count))
    elif depths.shape[:2] != (height, width):
        raise ShapeError(
            f"hypotheses {depths.shape} do not match {height}x{width}"
        )

    pixels = np.repeat(pixel_grid(height, width), count, axis=0)
    warped = warp_points(pixels, depths.reshape(-1), ref.K, src)
    sampled = bilinear_sample(src.features, warped.coords)
    mask = (warped.valid & sampled.valid).reshape(height, width, count)
    values = sampled.values.reshape(height, width, count, channels)
    return WarpedVolume(values, mask)
