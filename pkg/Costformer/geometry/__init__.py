"""Camera model, homography warping and depth-hypothesis generation."""

from Costformer.geometry.camera import CameraView
from Costformer.geometry.hypotheses import (
    DepthHypotheses,
    HypothesisMode,
    generate_hypotheses,
    recenter_hypotheses,
    refinement_width,
)
from Costformer.geometry.warping import (
    WarpedVolume,
    pixel_grid,
    warp_feature_volume,
    warp_pixel,
    warp_points,
)

__all__ = [
    "CameraView",
    "DepthHypotheses",
    "HypothesisMode",
    "WarpedVolume",
    "generate_hypotheses",
    "pixel_grid",
    "recenter_hypotheses",
    "refinement_width",
    "warp_feature_volume",
    "warp_pixel",
    "warp_points",
]
