"""Small strided convolutional pyramid shared by every view."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import numpy.typing as npt

from Costformer.errors import DomainError, ShapeError
from Costformer.pipeline.config import StageConfig
from Costformer.tensor_core import LinearParams, Module, Tensor, conv2d, linear
from Costformer.tensor_core.nn import component_rng, init_linear
from Costformer.tensor_core.tensor import DEFAULT_DTYPE

BASE_WIDTH = 8
IMAGE_CHANNELS = 3


def edge_pad(x: Tensor, pad: int) -> Tensor:
    """Replicate the border rows and columns of ``x[H, W, C]``."""
    if pad == 0:
        return x
    height, width = x.shape[:2]
    rows = np.clip(np.arange(-pad, height + pad), 0, height - 1)
    cols = np.clip(np.arange(-pad, width + pad), 0, width - 1)
    return x[rows[:, None], cols[None, :]]


def _conv(x: Tensor, p: LinearParams, stride: int = 1) -> Tensor:
    """3x3 convolution over edge-replicated borders, then ReLU."""
    return conv2d(edge_pad(x, 1), p, kernel=3, stride=stride, padding=0).relu()


class FeatureExtractor(Module):
    """Conv pyramid at widths 8, 16, 32, ... plus one 1x1 head per stage.

    Level ``l`` sits at scale ``2**l``; each level is a stride-2 conv
    followed by a stride-1 conv, level 0 being two stride-1 convs.
    """

    def __init__(
        self,
        seed: int,
        stages: Sequence[StageConfig],
        base_width: int = BASE_WIDTH,
        dtype: npt.DTypeLike = DEFAULT_DTYPE,
    ) -> None:
        """Create the pyramid deep enough for the coarsest stage."""
        if not stages:
            raise DomainError("feature extractor needs at least one stage")
        self._scales = tuple(stage.scale for stage in stages)
        level_count = int(np.log2(max(self._scales))) + 1
        self.levels: list[list[LinearParams]] = []
        inputs = IMAGE_CHANNELS
        for level in range(level_count):
            width = base_width * 2**level
            rng = component_rng(seed, f"features.levels.{level}")
            self.levels.append(
                [
                    init_linear(rng, 9 * inputs, width, dtype=dtype),
                    init_linear(rng, 9 * width, width, dtype=dtype),
                ]
            )
            inputs = width
        self.heads = [
            init_linear(
                component_rng(seed, f"features.heads.{stage.index}"),
                base_width * stage.scale,
                stage.channels,
                dtype=dtype,
            )
            for stage in stages
        ]

    @property
    def max_scale(self) -> int:
        """Stride of the coarsest level."""
        return max(self._scales)

    @property
    def dtype(self) -> np.dtype:
        """Dtype of the convolution weights."""
        return self.levels[0][0].weight.dtype

    def forward(self, image: Tensor) -> list[Tensor]:
        """Map an ``[H, W, 3]`` image to one feature map per stage.

        The image is edge-padded to a multiple of the coarsest scale and
        the map at scale ``s`` is cropped to ``ceil(H / s) x ceil(W / s)``.
        """
        if image.ndim != 3 or image.shape[2] != IMAGE_CHANNELS:
            raise ShapeError(f"image must be [H, W, 3], got {image.shape}")
        height, width = image.shape[:2]
        step = self.max_scale
        padded = image.astype(self.dtype)
        extra_h, extra_w = -height % step, -width % step
        if extra_h or extra_w:
            rows = np.minimum(np.arange(height + extra_h), height - 1)
            cols = np.minimum(np.arange(width + extra_w), width - 1)
            padded = padded[rows[:, None], cols[None, :]]

        pyramid: dict[int, Tensor] = {}
        x = padded
        for level, (first, second) in enumerate(self.levels):
            x = _conv(x, first, stride=1 if level == 0 else 2)
            x = _conv(x, second)
            pyramid[2**level] = x

        maps = []
        for scale, head in zip(self._scales, self.heads, strict=True):
            rows, cols = -(-height // scale), -(-width // scale)
            maps.append(linear(pyramid[scale][:rows, :cols], head))
        return maps


def extract_features(
    image: Tensor | np.ndarray, extractor: FeatureExtractor
) -> list[Tensor]:
    """Run ``extractor`` on one view; every view shares its weights."""
    if not isinstance(image, Tensor):
        image = Tensor(image, dtype=extractor.dtype)
    return extractor.forward(image)
