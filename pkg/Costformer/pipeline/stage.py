"""One resolution stage of the coarse-to-fine depth loop."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from Costformer.cost_volume import (
    AggregatedCost,
    SpatialWindowParams,
    adaptive_spatial_aggregate,
    fuse_views,
    groupwise_correlation,
    reduce_groups,
    view_weights_from_costs,
)
from Costformer.errors import DomainError, ShapeError
from Costformer.geometry import (
    CameraView,
    DepthHypotheses,
    HypothesisMode,
    generate_hypotheses,
    recenter_hypotheses,
    refinement_width,
    warp_feature_volume,
)
from Costformer.pipeline.config import StageConfig
from Costformer.regression import soft_argmin
from Costformer.tensor_core import LinearParams, Module, Tensor
from Costformer.tensor_core.nn import component_rng, init_linear
from Costformer.tensor_core.tensor import DEFAULT_DTYPE
from Costformer.transformer import (
    AttentionVariant,
    RdactParams,
    RrtParams,
    rdact_forward,
    rrt_forward,
)

logger = logging.getLogger(__name__)


class StageParams(Module):
    """Learned parts of one stage.

    ``rdact`` is ``None`` and ``rrt`` is empty when the transformers are
    switched off; every other part draws the same initial values either
    way.
    """

    def __init__(
        self,
        reduce: list[LinearParams],
        spatial: SpatialWindowParams,
        rdact: RdactParams | None = None,
        rrt: Sequence[RrtParams] = (),
    ) -> None:
        """Assemble the stage from its parts."""
        self.rdact = rdact
        self.reduce = reduce
        self.spatial = spatial
        self.rrt = list(rrt)

    @classmethod
    def create(
        cls,
        seed: int,
        stage: StageConfig,
        use_rdact: bool = True,
        use_rrt: bool = True,
        variant: AttentionVariant | str = AttentionVariant.DEPTH_SPATIAL,
        dtype: npt.DTypeLike = DEFAULT_DTYPE,
    ) -> StageParams:
        """Initialize stage ``stage.index`` from component streams."""
        name = f"stages.{stage.index}"
        groups = stage.groups
        reduce_rng = component_rng(seed, f"{name}.reduce")
        reduce = [
            init_linear(reduce_rng, groups, groups, dtype=dtype),
            init_linear(reduce_rng, groups, 1, dtype=dtype),
        ]
        spatial = SpatialWindowParams(
            stage.channels,
            groups,
            kernel=stage.spatial_kernel,
            seed=seed,
            name=f"{name}.spatial",
            dtype=dtype,
        )
        rdact = None
        if use_rdact:
            cfg = stage.rdact
            rdact = RdactParams.create(
                seed,
                f"{name}.rdact",
                groups,
                cfg.dim,
                cfg.pairs,
                heads=cfg.heads,
                patch=cfg.patch,
                window=cfg.window,
                variant=variant,
                dtype=dtype,
            )
        rrt: list[RrtParams] = []
        if use_rrt:
            rrt = [
                RrtParams.create(
                    seed,
                    f"{name}.rrt.{iteration}",
                    stage.hypotheses,
                    cfg.dim,
                    pairs=cfg.pairs,
                    heads=cfg.heads,
                    window=cfg.window,
                    patch=cfg.patch,
                    dtype=dtype,
                )
                for iteration, cfg in enumerate(stage.rrt)
            ]
        return cls(reduce, spatial, rdact, rrt)


@dataclass(frozen=True, eq=False)
class StageResult:
    """Depth, hypotheses and final cost of every iteration of a stage."""

    depths: list[Tensor]
    hypotheses: list[DepthHypotheses]
    costs: list[AggregatedCost]
    view_weights: Tensor

    @property
    def depth(self) -> Tensor:
        """Depth of the last iteration."""
        return self.depths[-1]


def upsample_nearest(
    values: np.ndarray, factor: int, extents: Sequence[int]
) -> np.ndarray:
    """Repeat the last two axes ``factor`` times and crop to ``extents``."""
    if factor < 1:
        raise DomainError(f"upsampling factor must be >= 1, got {factor}")
    repeated = np.repeat(np.repeat(values, factor, axis=-2), factor, axis=-1)
    height, width = extents
    if repeated.shape[-2] < height or repeated.shape[-1] < width:
        raise ShapeError(
            f"{values.shape} upsampled by {factor} "
            f"cannot cover {height}x{width}"
        )
    return np.ascontiguousarray(repeated[..., :height, :width])


def stage_hypotheses(
    stage: StageConfig,
    prior: np.ndarray | None,
    d_min: float,
    d_max: float,
    stage_rank: int,
    mode: HypothesisMode | str,
    dtype: npt.DTypeLike,
) -> DepthHypotheses:
    """Global sweep without a prior, else a window re-centred on it."""
    if prior is None:
        return generate_hypotheses(d_min, d_max, stage.hypotheses, mode, dtype)
    width = refinement_width(d_min, d_max, stage_rank)
    return recenter_hypotheses(
        prior, stage.hypotheses, d_min, d_max, width, dtype
    )


def run_stage(
    params: StageParams,
    stage: StageConfig,
    ref: CameraView,
    sources: Sequence[CameraView],
    d_min: float,
    d_max: float,
    stage_rank: int = 0,
    prior: np.ndarray | None = None,
    view_weights: Tensor | None = None,
    mode: HypothesisMode | str = HypothesisMode.INVERSE_DEPTH,
) -> StageResult:
    """Iterate warp, correlate, fuse, aggregate and regress at one scale.

    Every view carries this stage's features. ``prior`` is a detached
    depth map at this resolution; without one the first iteration sweeps
    the whole range. ``view_weights`` computed here on first use are
    returned for reuse by finer stages.
    """
    if ref.features is None:
        raise ShapeError("reference view carries no features")
    if not sources:
        raise DomainError("need at least one source view")
    if params.rrt and len(params.rrt) != stage.iterations:
        raise ShapeError(
            f"{len(params.rrt)} regression blocks "
            f"for {stage.iterations} iterations"
        )
    dtype = ref.features.dtype
    height, width = ref.features.shape[:2]
    depths: list[Tensor] = []
    all_hyps: list[DepthHypotheses] = []
    costs: list[AggregatedCost] = []
    for iteration in range(stage.iterations):
        hyps = stage_hypotheses(
            stage, prior, d_min, d_max, stage_rank, mode, dtype
        )
        per_view = []
        for src in sources:
            warped = warp_feature_volume(src, hyps, ref)
            per_view.append(
                groupwise_correlation(
                    ref.features, warped.values, warped.mask, stage.groups
                )
            )
        if view_weights is None:
            view_weights = view_weights_from_costs(per_view)
        cost = fuse_views(per_view, view_weights)
        if params.rdact is not None:
            cost = rdact_forward(cost, params.rdact)
        aggregated = reduce_groups(cost, params.reduce)
        aggregated = adaptive_spatial_aggregate(
            aggregated, params.spatial, ref.features, hyps
        )
        if params.rrt:
            aggregated = rrt_forward(aggregated, params.rrt[iteration])
        depth = soft_argmin(aggregated, hyps)
        logger.debug(
            "stage %d iteration %d: %dx%d, D=%d, depth [%.3f, %.3f]",
            stage.index,
            iteration,
            height,
            width,
            hyps.count,
            float(depth.data.min()),
            float(depth.data.max()),
        )
        depths.append(depth)
        all_hyps.append(hyps)
        costs.append(aggregated)
        prior = depth.numpy()
    assert view_weights is not None
    return StageResult(depths, all_hyps, costs, view_weights)
