"""Differentiable neural-network primitives built on :class:`Tensor`."""

from __future__ import annotations

from collections.abc import Sequence
from typing import NamedTuple

import numpy as np
from scipy import special

from Costformer.errors import DomainError, ShapeError
from Costformer.tensor_core.nn import LayerNormParams, LinearParams
from Costformer.tensor_core.tensor import Tensor, concat, where

LAYER_NORM_EPS = 1e-5
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Normalized exponentials along ``axis`` with max subtraction."""
    if not -x.ndim <= axis < x.ndim:
        raise DomainError(f"softmax axis {axis} invalid for rank {x.ndim}")
    if x.shape[axis] < 1:
        raise DomainError("softmax needs at least one element along axis")
    if np.isnan(x.data).any():
        raise DomainError("softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        inner = (grad * out).sum(axis=axis, keepdims=True)
        return (out * (grad - inner),)

    return Tensor._wrap(out, (x,), backward)


def layer_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    axis: int = -1,
    eps: float = LAYER_NORM_EPS,
) -> Tensor:
    """Standardize slices along ``axis`` then scale and shift them."""
    if not -x.ndim <= axis < x.ndim:
        raise DomainError(f"layer_norm axis {axis} invalid for rank {x.ndim}")
    extent = x.shape[axis]
    if gamma.shape != (extent,) or beta.shape != (extent,):
        raise ShapeError(
            f"gamma {gamma.shape} / beta {beta.shape} must be ({extent},)"
        )
    if axis % x.ndim != x.ndim - 1:
        moved = x.swapaxes(axis, -1)
        return layer_norm(moved, gamma, beta, -1, eps).swapaxes(axis, -1)

    data = x.data
    mean = data.mean(axis=-1, keepdims=True)
    centered = data - mean
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(variance + eps)
    normed = centered * inv_std
    g, b = gamma.data, beta.data
    reduce_axes = tuple(range(data.ndim - 1))

    def backward(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        d_normed = grad * g
        d_x = inv_std * (
            d_normed
            - d_normed.mean(axis=-1, keepdims=True)
            - normed * (d_normed * normed).mean(axis=-1, keepdims=True)
        )
        return (
            d_x,
            (grad * normed).sum(axis=reduce_axes),
            grad.sum(axis=reduce_axes),
        )

    return Tensor._wrap(normed * g + b, (x, gamma, beta), backward)


def apply_layer_norm(x: Tensor, params: LayerNormParams) -> Tensor:
    """Layer-normalize the last axis with stored parameters."""
    return layer_norm(x, params.gamma, params.beta, axis=-1)


def linear(x: Tensor, p: LinearParams) -> Tensor:
    """Replace the last axis by ``x @ weight (+ bias)``."""
    if x.ndim == 0 or x.shape[-1] != p.in_dim:
        raise ShapeError(
            f"linear expects last extent {p.in_dim}, got {x.shape}"
        )
    if x.ndim == 1:
        return linear(x.reshape(1, -1), p).reshape(p.out_dim)
    out = x @ p.weight
    return out + p.bias if p.bias is not None else out


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF ``Phi``."""
    data = x.data
    cdf = special.ndtr(data).astype(data.dtype)

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * data * data)
        return (grad * (cdf + data * pdf),)

    return Tensor._wrap(data * cdf, (x,), backward)


def mlp_gelu(x: Tensor, fc1: LinearParams, fc2: LinearParams) -> Tensor:
    """Two fully-connected layers with GELU between them."""
    if fc2.in_dim != fc1.out_dim:
        raise ShapeError(
            f"fc2 takes {fc2.in_dim} features but fc1 emits {fc1.out_dim}"
        )
    return linear(gelu(linear(x, fc1)), fc2)


def linear_stack(x: Tensor, layers: Sequence[LinearParams]) -> Tensor:
    """Apply linear layers with ReLU between consecutive ones."""
    for index, layer in enumerate(layers):
        x = linear(x, layer)
        if index < len(layers) - 1:
            x = x.relu()
    return x


class Sampled(NamedTuple):
    """Bilinear samples plus a per-sample validity flag."""

    values: Tensor
    valid: np.ndarray


def bilinear_sample(feature_map: Tensor, coords: Tensor) -> Sampled:
    """Sample ``feature_map[H, W, C]`` at continuous ``(x, y)`` positions.

    Samples outside ``[0, W-1] x [0, H-1]`` come back as zeros with
    ``valid`` false and pass no gradient to either input.
    """
    if feature_map.ndim != 3:
        raise ShapeError(f"map must be [H, W, C], got {feature_map.shape}")
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ShapeError(f"coords must be [N, 2], got {coords.shape}")
    height, width, _ = feature_map.shape
    fmap = feature_map.data
    dtype = fmap.dtype
    x = coords.data[:, 0].astype(dtype)
    y = coords.data[:, 1].astype(dtype)
    valid = (
        np.isfinite(x)
        & np.isfinite(y)
        & (x >= 0)
        & (x <= width - 1)
        & (y >= 0)
        & (y <= height - 1)
    )
    xs = np.where(valid, x, 0)
    ys = np.where(valid, y, 0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    ax = (xs - x0).astype(dtype)[:, None]
    ay = (ys - y0).astype(dtype)[:, None]
    keep = valid[:, None].astype(dtype)

    f00, f01 = fmap[y0, x0], fmap[y0, x1]
    f10, f11 = fmap[y1, x0], fmap[y1, x1]
    w00 = (1 - ax) * (1 - ay) * keep
    w01 = ax * (1 - ay) * keep
    w10 = (1 - ax) * ay * keep
    w11 = ax * ay * keep
    out = w00 * f00 + w01 * f01 + w10 * f10 + w11 * f11

    def backward(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d_map = np.zeros_like(fmap)
        for weight, rows, cols in (
            (w00, y0, x0),
            (w01, y0, x1),
            (w10, y1, x0),
            (w11, y1, x1),
        ):
            np.add.at(d_map, (rows, cols), grad * weight)
        d_x = ((1 - ay) * (f01 - f00) + ay * (f11 - f10)) * keep
        d_y = ((1 - ax) * (f10 - f00) + ax * (f11 - f01)) * keep
        d_coords = np.stack(
            [(grad * d_x).sum(axis=1), (grad * d_y).sum(axis=1)], axis=1
        ).astype(coords.dtype)
        return d_map, d_coords

    return Sampled(Tensor._wrap(out, (feature_map, coords), backward), valid)


def smooth_l1(pred: Tensor, target: Tensor, beta: float = 1.0) -> Tensor:
    """Elementwise smooth-L1: quadratic below ``beta``, linear above."""
    diff = pred - target
    magnitude = diff.abs()
    quadratic = diff * diff * (0.5 / beta)
    return where(magnitude.data < beta, quadratic, magnitude - 0.5 * beta)


def conv2d(
    x: Tensor,
    p: LinearParams,
    kernel: int = 3,
    stride: int = 1,
    padding: int | None = None,
) -> Tensor:
    """Convolve ``x[H, W, C_in]`` as patch gathering plus a linear map.

    ``p.weight`` is laid out ``[kernel * kernel * C_in, C_out]`` with the
    row offset varying slowest, then the column offset, then the channel.
    """
    if x.ndim != 3:
        raise ShapeError(f"conv2d expects [H, W, C], got {x.shape}")
    channels = x.shape[2]
    if p.in_dim != kernel * kernel * channels:
        raise ShapeError(
            f"conv weight takes {p.in_dim} inputs, patch has "
            f"{kernel * kernel * channels}"
        )
    pad = kernel // 2 if padding is None else padding
    padded = x.pad([(pad, pad), (pad, pad), (0, 0)])
    out_h = (padded.shape[0] - kernel) // stride + 1
    out_w = (padded.shape[1] - kernel) // stride + 1
    taps = [
        padded[
            dy : dy + stride * (out_h - 1) + 1 : stride,
            dx : dx + stride * (out_w - 1) + 1 : stride,
            :,
        ]
        for dy in range(kernel)
        for dx in range(kernel)
    ]
    return linear(concat(taps, axis=2), p)
