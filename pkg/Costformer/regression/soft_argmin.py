"""Differentiable depth regression from a single-channel cost."""

from __future__ import annotations

from Costformer.cost_volume import AggregatedCost
from Costformer.errors import ShapeError
from Costformer.geometry import DepthHypotheses
from Costformer.tensor_core import Tensor, softmax


def hypothesis_probability(c: AggregatedCost) -> Tensor:
    """Softmax of the cost along depth; a larger cost is a better match."""
    return softmax(c.cost, axis=-1)


def soft_argmin(c: AggregatedCost, hyps: DepthHypotheses) -> Tensor:
    """Expected depth ``sum_j softmax_j(c) * d_j`` per pixel, ``[H, W]``."""
    height, width, depth = c.shape
    if hyps.count != depth:
        raise ShapeError(f"{hyps.count} hypotheses for a cost with D={depth}")
    if hyps.per_pixel and hyps.values.shape[:2] != (height, width):
        raise ShapeError(
            f"hypotheses {hyps.values.shape} do not match {height}x{width}"
        )
    values = hyps.values.astype(c.cost.dtype)
    return (hypothesis_probability(c) * values).sum(axis=-1)
