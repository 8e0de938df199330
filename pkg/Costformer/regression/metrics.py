"""Depth-map error metrics."""

from __future__ import annotations

from typing import TypedDict

import numpy as np

from Costformer.errors import DomainError, ShapeError


class DepthMetrics(TypedDict):
    """Errors over the valid pixels of one depth map."""

    valid_pixels: int
    abs_depth: float
    abs_inverse_depth: float
    epe: float
    e1: float
    e3: float


def evaluate_depth(
    pred: np.ndarray,
    gt: np.ndarray,
    mask: np.ndarray | None,
    interval: float,
) -> DepthMetrics:
    """Compare a predicted depth map with ground truth.

    ``epe`` is the mean absolute depth error in units of the hypothesis
    ``interval``; ``e1`` and ``e3`` are the fractions of pixels whose error
    exceeds 1 and 3 intervals. With no valid pixel every error is 0.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} != ground truth {gt.shape}")
    if interval <= 0:
        raise DomainError(f"interval must be positive, got {interval}")
    valid = np.isfinite(gt) & (gt > 0) & np.isfinite(pred) & (pred > 0)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        return DepthMetrics(
            valid_pixels=0,
            abs_depth=0.0,
            abs_inverse_depth=0.0,
            epe=0.0,
            e1=0.0,
            e3=0.0,
        )
    error = np.abs(pred[valid] - gt[valid])
    inverse_error = np.abs(1.0 / pred[valid] - 1.0 / gt[valid])
    steps = error / interval
    return DepthMetrics(
        valid_pixels=count,
        abs_depth=float(error.mean()),
        abs_inverse_depth=float(inverse_error.mean()),
        epe=float(steps.mean()),
        e1=float((steps > 1).mean()),
        e3=float((steps > 3).mean()),
    )
