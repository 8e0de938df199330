"""Group-wise correlation, view fusion and the 1x1x1 group reduction."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from Costformer.errors import DomainError, ShapeError
from Costformer.tensor_core import (
    LinearParams,
    Tensor,
    linear_stack,
    softmax,
)

WEIGHT_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class CostVolume:
    """Grouped matching cost ``[H, W, D, G]`` built from ``C`` channels."""

    cost: Tensor
    group_count: int
    channel_count: int

    def __post_init__(self) -> None:
        """Check the group layout."""
        if self.cost.ndim != 4 or self.cost.shape[3] != self.group_count:
            raise ShapeError(
                f"cost {self.cost.shape} is not [H, W, D, {self.group_count}]"
            )
        if self.channel_count % self.group_count:
            raise ShapeError(
                f"{self.group_count} groups do not divide {self.channel_count}"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        """Extents ``(H, W, D, G)``."""
        return self.cost.shape

    def with_cost(self, cost: Tensor) -> CostVolume:
        """Return a volume with the same layout and new values."""
        return CostVolume(cost, self.group_count, self.channel_count)


@dataclass(frozen=True, eq=False)
class AggregatedCost:
    """Single-channel cost ``[H, W, D]``."""

    cost: Tensor

    def __post_init__(self) -> None:
        """Check the rank."""
        if self.cost.ndim != 3:
            raise ShapeError(
                f"aggregated cost must be [H, W, D], got {self.cost.shape}"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        """Extents ``(H, W, D)``."""
        return self.cost.shape


def groupwise_correlation(
    ref_features: Tensor,
    warped: Tensor,
    mask: np.ndarray | None,
    groups: int,
) -> CostVolume:
    """Scaled inner product of each channel group, ``G/C <F0^g, Fi^g>``.

    Entries whose warped sample is masked out are zero.
    """
    height, width, channels = ref_features.shape
    if warped.ndim != 4 or warped.shape[:2] != (height, width) or (
        warped.shape[3] != channels
    ):
        raise ShapeError(
            f"warped {warped.shape} does not match "
            f"reference {ref_features.shape}"
        )
    if groups < 1 or channels % groups:
        raise ShapeError(f"{groups} groups do not divide {channels} channels")
    depth = warped.shape[2]
    per_group = channels // groups
    product = ref_features.reshape(height, width, 1, channels) * warped
    cost = product.reshape(height, width, depth, groups, per_group).sum(axis=-1)
    cost = cost * (groups / channels)
    if mask is not None:
        if mask.shape != (height, width, depth):
            raise ShapeError(
                f"mask {mask.shape} is not [{height}, {width}, {depth}]"
            )
        cost = cost * mask[..., None].astype(cost.dtype)
    return CostVolume(cost, groups, channels)


def view_weights_from_costs(per_view: Sequence[CostVolume]) -> Tensor:
    """Pixel-wise view weights: softmax over views of the mean correlation.

    The result is ``[N, H, W]`` and carries no gradient.
    """
    if not per_view:
        raise DomainError("need at least one source view")
    scores = np.stack([cv.cost.data.mean(axis=(2, 3)) for cv in per_view])
    logits = Tensor(scores, dtype=per_view[0].cost.dtype)
    return softmax(logits, axis=0).detach()


def fuse_views(
    per_view: Sequence[CostVolume], view_weights: Tensor
) -> CostVolume:
    """Weighted mean of per-view volumes with pixel-wise weights."""
    if not per_view:
        raise DomainError("need at least one source view")
    height, width = per_view[0].shape[:2]
    if view_weights.shape != (len(per_view), height, width):
        raise ShapeError(
            f"view weights {view_weights.shape} are not "
            f"[{len(per_view)}, {height}, {width}]"
        )
    if (view_weights.data < 0).any():
        raise DomainError("view weights must be non-negative")
    numerator: Tensor | None = None
    for index, cv in enumerate(per_view):
        w = view_weights[index].reshape(height, width, 1, 1)
        term = cv.cost * w
        numerator = term if numerator is None else numerator + term
    denominator = view_weights.sum(axis=0).clip_min(WEIGHT_FLOOR)
    assert numerator is not None
    fused = numerator / denominator.reshape(height, width, 1, 1)
    return per_view[0].with_cost(fused)


def reduce_groups(
    cv: CostVolume, proj: Sequence[LinearParams]
) -> AggregatedCost:
    """Collapse the group axis to one cost per voxel (a 1x1x1 conv stack)."""
    if not proj:
        raise ShapeError("reduction needs at least one layer")
    if proj[0].in_dim != cv.group_count or proj[-1].out_dim != 1:
        raise ShapeError(
            f"reduction maps {proj[0].in_dim}->{proj[-1].out_dim}, "
            f"expected {cv.group_count}->1"
        )
    out = linear_stack(cv.cost, proj)
    return AggregatedCost(out.reshape(out.shape[:3]))
