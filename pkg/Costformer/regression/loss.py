"""Per-iteration regression losses and their sum over stages."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from Costformer.errors import DomainError, ShapeError
from Costformer.tensor_core import Tensor, smooth_l1

SMOOTH_L1_BETA = 1.0

type LossValue = Tensor | float


@dataclass
class LossTerms:
    """Loss of every iteration at every stage, coarsest stage first.

    ``l_ref`` stays 0 while no refinement module exists.
    """

    per_stage_per_iter: list[list[LossValue]] = field(default_factory=list)
    l_ref: float = 0.0

    def add(self, stage: int, value: LossValue) -> None:
        """Append an iteration loss to ``stage``, opening stages as needed."""
        while len(self.per_stage_per_iter) <= stage:
            self.per_stage_per_iter.append([])
        self.per_stage_per_iter[stage].append(value)

    def stage_totals(self) -> list[float]:
        """Sum of the iteration losses of each stage, as floats."""
        return [
            sum(_as_float(value) for value in stage)
            for stage in self.per_stage_per_iter
        ]


def _as_float(value: LossValue) -> float:
    """Read a loss term as a Python float."""
    return value.item() if isinstance(value, Tensor) else float(value)


def downsample_nearest(depth: np.ndarray, scale: int) -> np.ndarray:
    """Take every ``scale``-th pixel, matching stride-``scale`` features."""
    if scale < 1:
        raise DomainError(f"scale must be >= 1, got {scale}")
    return np.ascontiguousarray(depth[::scale, ::scale])


def stage_loss(pred: Tensor, gt: Tensor, valid: np.ndarray) -> Tensor:
    """Mean smooth-L1 over valid pixels; 0 when no pixel is valid."""
    if pred.shape != gt.shape or valid.shape != pred.shape:
        raise ShapeError(
            f"pred {pred.shape}, gt {gt.shape} and mask {valid.shape} differ"
        )
    count = int(np.count_nonzero(valid))
    if count == 0:
        return Tensor(0.0, dtype=pred.dtype)
    # ground truth at invalid pixels may be non-finite
    safe_gt = Tensor(np.where(valid, gt.data, pred.data), dtype=pred.dtype)
    per_pixel = smooth_l1(pred, safe_gt, SMOOTH_L1_BETA)
    weights = valid.astype(pred.dtype)
    return (per_pixel * weights).sum() * (1.0 / count)


def inverse_depth_loss(
    pred_depth: Tensor, gt_depth: np.ndarray, valid: np.ndarray
) -> Tensor:
    """:func:`stage_loss` on inverse depths; invalid ground truth is skipped."""
    valid = valid & (gt_depth > 0)
    safe = np.where(valid, gt_depth, 1.0)
    gt_inverse = Tensor(1.0 / safe, dtype=pred_depth.dtype)
    return stage_loss(1.0 / pred_depth, gt_inverse, valid)


def _as_terms(terms: LossTerms | Sequence[Sequence[LossValue]]) -> LossTerms:
    """Accept nested lists wherever loss terms are expected."""
    if isinstance(terms, LossTerms):
        return terms
    return LossTerms([list(stage) for stage in terms])


def total_loss(terms: LossTerms | Sequence[Sequence[LossValue]]) -> float:
    """Double-precision sum of every iteration loss plus ``l_ref``."""
    terms = _as_terms(terms)
    values = [
        _as_float(value)
        for stage in terms.per_stage_per_iter
        for value in stage
    ]
    return math.fsum([*values, terms.l_ref])


def loss_objective(
    terms: LossTerms | Sequence[Sequence[LossValue]],
) -> LossValue:
    """The same sum kept on the tape, for backpropagation."""
    terms = _as_terms(terms)
    total: LossValue = 0.0
    for stage in terms.per_stage_per_iter:
        for value in stage:
            if isinstance(value, Tensor):
                total = value + total
            else:
                total = total + value
    return total + terms.l_ref
