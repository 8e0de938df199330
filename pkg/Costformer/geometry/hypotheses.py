"""Depth hypotheses: global plane sweeps and per-pixel re-centred windows."""

from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from Costformer.errors import DomainError
from Costformer.tensor_core import Tensor


class HypothesisMode(StrEnum):
    """How samples are spread over the depth range."""

    INVERSE_DEPTH = "inverse-depth"
    LINEAR = "linear"


@dataclass(frozen=True, eq=False)
class DepthHypotheses:
    """Candidate depths, ``[D]`` shared by all pixels or ``[H, W, D]``."""

    values: Tensor

    def __post_init__(self) -> None:
        """Check positivity and increasing order along the depth axis."""
        data = self.values.data
        if data.ndim not in (1, 3) or data.shape[-1] < 1:
            raise DomainError(
                f"hypotheses must be [D] or [H, W, D], got {data.shape}"
            )
        if not (np.isfinite(data).all() and (data > 0).all()):
            raise DomainError("depth hypotheses must be finite and positive")
        if data.shape[-1] > 1 and not (np.diff(data, axis=-1) > 0).all():
            raise DomainError("depth hypotheses must increase along D")

    @property
    def count(self) -> int:
        """Number of hypotheses ``D``."""
        return self.values.shape[-1]

    @property
    def per_pixel(self) -> bool:
        """Whether every pixel has its own hypotheses."""
        return self.values.ndim == 3

    def dense(self, height: int, width: int) -> np.ndarray:
        """Return the values broadcast to ``[H, W, D]``."""
        return np.broadcast_to(
            self.values.data, (height, width, self.count)
        ).astype(np.float64)


def _check_range(d_min: float, d_max: float) -> None:
    """Reject empty or non-positive depth ranges."""
    if not (0 < d_min < d_max) or not np.isfinite(d_max):
        raise DomainError(f"invalid depth range [{d_min}, {d_max}]")


def generate_hypotheses(
    d_min: float,
    d_max: float,
    count: int,
    mode: HypothesisMode | str = HypothesisMode.INVERSE_DEPTH,
    dtype: np.dtype | type = np.float32,
) -> DepthHypotheses:
    """Sweep ``count`` depths over ``[d_min, d_max]`` with both endpoints.

    A single hypothesis sits at the midpoint of the range, measured in
    depth for linear mode and in inverse depth otherwise.
    """
    _check_range(d_min, d_max)
    if count < 1:
        raise DomainError(f"need at least one hypothesis, got {count}")
    mode = HypothesisMode(mode)
    if mode is HypothesisMode.LINEAR:
        if count == 1:
            values = np.array([(d_min + d_max) / 2.0])
        else:
            values = np.linspace(d_min, d_max, count)
    else:
        inverse = np.linspace(1.0 / d_min, 1.0 / d_max, max(count, 2))
        if count == 1:
            inverse = np.array([(1.0 / d_min + 1.0 / d_max) / 2.0])
        values = 1.0 / inverse
    return DepthHypotheses(Tensor(values, dtype=dtype))


def refinement_width(d_min: float, d_max: float, stage_rank: int) -> float:
    """Inverse-depth window width for re-centred sweeps at a stage.

    ``stage_rank`` is 0 for the coarsest stage; the width halves for each
    finer stage, starting at half of the global inverse range.
    """
    _check_range(d_min, d_max)
    return (1.0 / d_min - 1.0 / d_max) * 0.5 ** (stage_rank + 1)


def recenter_hypotheses(
    prior_depth: np.ndarray,
    count: int,
    d_min: float,
    d_max: float,
    width: float,
    dtype: np.dtype | type = np.float32,
) -> DepthHypotheses:
    """Place ``count`` per-pixel hypotheses around ``prior_depth``.

    The window is uniform in inverse depth, ``width`` wide, and slides so
    that it stays inside the global range.
    """
    _check_range(d_min, d_max)
    if count < 1:
        raise DomainError(f"need at least one hypothesis, got {count}")
    inv_near, inv_far = 1.0 / d_min, 1.0 / d_max
    width = min(width, inv_near - inv_far)
    prior = np.clip(np.asarray(prior_depth, dtype=np.float64), d_min, d_max)
    center = np.clip(1.0 / prior, inv_far + width / 2.0, inv_near - width / 2.0)
    if count == 1:
        offsets = np.zeros(1)
    else:
        offsets = np.linspace(width / 2.0, -width / 2.0, count)
    inverse = center[..., None] + offsets
    return DepthHypotheses(Tensor(1.0 / inverse, dtype=dtype))
