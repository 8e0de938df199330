"""Depth regression, training losses and evaluation metrics."""

from Costformer.regression.loss import (
    LossTerms,
    downsample_nearest,
    inverse_depth_loss,
    loss_objective,
    stage_loss,
    total_loss,
)
from Costformer.regression.metrics import DepthMetrics, evaluate_depth
from Costformer.regression.soft_argmin import (
    hypothesis_probability,
    soft_argmin,
)

__all__ = [
    "DepthMetrics",
    "LossTerms",
    "downsample_nearest",
    "evaluate_depth",
    "hypothesis_probability",
    "inverse_depth_loss",
    "loss_objective",
    "soft_argmin",
    "stage_loss",
    "total_loss",
]
