"""Matching costs: group-wise correlation, view fusion, spatial aggregation."""

from Costformer.cost_volume.correlation import (
    AggregatedCost,
    CostVolume,
    fuse_views,
    groupwise_correlation,
    reduce_groups,
    view_weights_from_costs,
)
from Costformer.cost_volume.spatial_aggregation import (
    SpatialWindowParams,
    adaptive_spatial_aggregate,
    grid_offsets,
)

__all__ = [
    "AggregatedCost",
    "CostVolume",
    "SpatialWindowParams",
    "adaptive_spatial_aggregate",
    "fuse_views",
    "grid_offsets",
    "groupwise_correlation",
    "reduce_groups",
    "view_weights_from_costs",
]
