"""Adaptive spatial aggregation of a single-channel cost over a pixel window."""

from __future__ import annotations

import numpy as np
import numpy.typing as npt

from Costformer.cost_volume.correlation import AggregatedCost
from Costformer.errors import DomainError, ShapeError
from Costformer.geometry import DepthHypotheses, pixel_grid
from Costformer.tensor_core import (
    Module,
    Tensor,
    bilinear_sample,
    linear,
    linear_stack,
    where,
)
from Costformer.tensor_core.nn import component_rng, init_linear
from Costformer.tensor_core.tensor import DEFAULT_DTYPE


def grid_offsets(kernel: int) -> np.ndarray:
    """Return the ``kernel x kernel`` offsets ``(dx, dy)`` centred on zero."""
    if kernel < 1 or kernel % 2 == 0:
        raise DomainError(
            f"window kernel must be odd and positive, got {kernel}"
        )
    radius = kernel // 2
    dys, dxs = np.meshgrid(
        np.arange(-radius, radius + 1), np.arange(-radius, radius + 1),
        indexing="ij",
    )
    offsets = np.stack([dxs.reshape(-1), dys.reshape(-1)], axis=1)
    return offsets.astype(np.float64)


class SpatialWindowParams(Module):
    """Sampling grid, offset head and weight net for one aggregation block.

    ``offset_proj`` maps reference features to one ``(dx, dy)`` per grid
    sample and starts at zero, so the block begins as a plain grid.
    ``weight_net`` turns the group correlation between the centre feature
    and the sampled feature into a sigmoid weight.
    """

    def __init__(
        self,
        channels: int,
        groups: int,
        kernel: int = 3,
        hidden: int = 8,
        temperature: float = 1.0,
        seed: int = 0,
        name: str = "spatial",
        dtype: npt.DTypeLike = DEFAULT_DTYPE,
    ) -> None:
        """Create the block for ``channels``-wide reference features."""
        if groups < 1 or channels % groups:
            raise ShapeError(
                f"{groups} groups do not divide {channels} channels"
            )
        if temperature <= 0:
            raise DomainError(
                f"temperature must be positive, got {temperature}"
            )
        self.offsets_base = grid_offsets(kernel)
        self.groups = groups
        self.temperature = temperature
        samples = len(self.offsets_base)
        self.offset_proj = init_linear(
            component_rng(seed, f"{name}.offsets"),
            channels,
            2 * samples,
            zero=True,
            dtype=dtype,
        )
        rng = component_rng(seed, f"{name}.weights")
        self.weight_net = [
            init_linear(rng, groups, hidden, dtype=dtype),
            init_linear(rng, hidden, 1, dtype=dtype),
        ]

    @property
    def sample_count(self) -> int:
        """Number of samples ``K_e`` per pixel."""
        return len(self.offsets_base)

    @property
    def channels(self) -> int:
        """Feature width the offset head expects."""
        return self.offset_proj.in_dim


def _group_similarity(center: Tensor, sampled: Tensor, groups: int) -> Tensor:
    """Scaled per-group inner product of ``[N, 1, C]`` and ``[N, K, C]``."""
    n, k, channels = sampled.shape
    product = (center * sampled).reshape(n, k, groups, channels // groups)
    return product.sum(axis=-1) * (groups / channels)


def sample_weights(
    params: SpatialWindowParams, ref_features: Tensor, coords: Tensor
) -> Tensor:
    """Feature-similarity weight ``w_k`` in ``(0, 1)`` per ``[N, K]`` sample."""
    height, width, channels = ref_features.shape
    count = height * width
    k = params.sample_count
    sampled = bilinear_sample(ref_features, coords.reshape(count * k, 2)).values
    similarity = _group_similarity(
        ref_features.reshape(count, 1, channels),
        sampled.reshape(count, k, channels),
        params.groups,
    )
    logits = linear_stack(similarity, params.weight_net)
    return logits.reshape(count, k).sigmoid()


def depth_similarity(
    hyps: DepthHypotheses,
    coords: Tensor,
    height: int,
    width: int,
    temperature: float,
) -> Tensor:
    """Depth weight ``d_k`` per ``[N, K, D]`` sample, from inverse depths.

    The hypotheses themselves carry no gradient; the sample positions do,
    so per-pixel hypotheses pass gradient to the learned offsets.
    """
    count, k, _ = coords.shape
    dtype = coords.dtype
    inverse = Tensor(1.0 / hyps.dense(height, width), dtype=dtype)
    sampled = bilinear_sample(inverse, coords.reshape(count * k, 2)).values
    center = inverse.reshape(count, 1, -1)
    gap = (sampled.reshape(count, k, -1) - center).abs() / temperature
    return (-gap).sigmoid()


def adaptive_spatial_aggregate(
    c: AggregatedCost,
    params: SpatialWindowParams,
    ref_features: Tensor,
    hyps: DepthHypotheses,
) -> AggregatedCost:
    """Normalized ``w_k d_k`` weighted sum of the cost at ``K_e`` positions.

    Positions are the grid offsets plus learned per-pixel offsets around
    every pixel; costs there are bilinearly interpolated. Samples outside
    the image weigh nothing, and a pixel with no weight left keeps its own
    cost.
    """
    height, width, depth = c.shape
    if ref_features.shape[:2] != (height, width):
        raise ShapeError(
            f"features {ref_features.shape} do not match cost {c.shape}"
        )
    if ref_features.shape[2] != params.channels:
        raise ShapeError(
            f"aggregation expects {params.channels} channels, "
            f"got {ref_features.shape[2]}"
        )
    if hyps.count != depth:
        raise ShapeError(f"{hyps.count} hypotheses for a cost with D={depth}")
    count, k = height * width, params.sample_count
    dtype = c.cost.dtype

    flat = ref_features.reshape(count, params.channels)
    learned = linear(flat, params.offset_proj)
    base = pixel_grid(height, width)[:, None, :] + params.offsets_base[None]
    coords = learned.reshape(count, k, 2) + base.astype(dtype)

    sampled = bilinear_sample(c.cost, coords.reshape(count * k, 2))
    values = sampled.values.reshape(count, k, depth)
    valid = sampled.valid.reshape(count, k, 1).astype(dtype)

    w = sample_weights(params, ref_features, coords)
    d = depth_similarity(hyps, coords, height, width, params.temperature)
    weight = w.reshape(count, k, 1) * (d * valid)

    total = weight.sum(axis=1)
    has_weight = total.data > 0
    safe_total = where(has_weight, total, Tensor(np.ones_like(total.data)))
    blended = (weight * values).sum(axis=1) / safe_total
    center = c.cost.reshape(count, depth)
    out = where(has_weight, blended, center)
    return AggregatedCost(out.reshape(height, width, depth))
