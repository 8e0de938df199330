"""Entry point for running the model on a scene."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import numpy.typing as npt

from Costformer.errors import CheckpointError, ShapeError
from Costformer.geometry import CameraView
from Costformer.pipeline.checkpoint import Checkpoint, checkpoint_from_state
from Costformer.pipeline.config import (
    ModelConfig,
    config_to_dict,
    model_config_from_dict,
)
from Costformer.pipeline.features import FeatureExtractor
from Costformer.pipeline.stage import (
    StageParams,
    StageResult,
    run_stage,
    upsample_nearest,
)
from Costformer.regression import (
    DepthMetrics,
    LossTerms,
    downsample_nearest,
    evaluate_depth,
    inverse_depth_loss,
)
from Costformer.tensor_core import Module, Tensor
from Costformer.tensor_core.tensor import DEFAULT_DTYPE

logger = logging.getLogger(__name__)


class Scene(Protocol):
    """Views the model can run on; ``images[0]`` is the reference."""

    images: tuple[np.ndarray, ...]
    cameras: tuple[CameraView, ...]
    d_min: float
    d_max: float


@dataclass(frozen=True, eq=False)
class ModelOutput:
    """Results of every stage, coarsest first."""

    stages: list[StageResult]

    @property
    def depth(self) -> Tensor:
        """Final depth at full resolution."""
        return self.stages[-1].depth


class Costformer(Module):
    """Feature pyramid plus one stage block per resolution."""

    def __init__(
        self,
        config: ModelConfig,
        seed: int = 0,
        dtype: npt.DTypeLike = DEFAULT_DTYPE,
    ) -> None:
        """Initialize every component from ``seed``."""
        self._config = config
        self._seed = seed
        self.features = FeatureExtractor(seed, config.stages, dtype=dtype)
        self.stages = [
            StageParams.create(
                seed,
                stage,
                use_rdact=config.use_rdact,
                use_rrt=config.use_rrt,
                variant=config.attention_variant,
                dtype=dtype,
            )
            for stage in config.stages
        ]

    @property
    def config(self) -> ModelConfig:
        """Configuration the model was built from."""
        return self._config

    @property
    def seed(self) -> int:
        """Seed of the initial values."""
        return self._seed

    @property
    def dtype(self) -> np.dtype:
        """Dtype of the parameters and of the forward pass."""
        return self.features.dtype

    def stage_views(self, scene: Scene) -> list[list[CameraView]]:
        """Cameras carrying each stage's features, reference first."""
        if len(scene.images) != len(scene.cameras) or len(scene.images) < 2:
            raise ShapeError("scene needs a reference and a source view")
        maps = [
            self.features.forward(Tensor(image, dtype=self.dtype))
            for image in scene.images
        ]
        return [
            [
                camera.scaled(1.0 / stage.scale).with_features(view_maps[rank])
                for camera, view_maps in zip(scene.cameras, maps, strict=True)
            ]
            for rank, stage in enumerate(self._config.stages)
        ]

    def forward(self, scene: Scene) -> ModelOutput:
        """Run every stage coarse to fine.

        Each stage starts from the previous stage's depth and view weights,
        upsampled by nearest neighbour and cut from the graph.
        """
        results: list[StageResult] = []
        prior: np.ndarray | None = None
        weights: Tensor | None = None
        previous_scale = 0
        for rank, (stage, params, views) in enumerate(
            zip(
                self._config.stages,
                self.stages,
                self.stage_views(scene),
                strict=True,
            )
        ):
            extents = views[0].features.shape[:2]
            if prior is not None and weights is not None:
                factor = previous_scale // stage.scale
                prior = upsample_nearest(prior, factor, extents)
                weights = Tensor(
                    upsample_nearest(weights.data, factor, extents),
                    dtype=self.dtype,
                )
            result = run_stage(
                params,
                stage,
                views[0],
                views[1:],
                scene.d_min,
                scene.d_max,
                stage_rank=rank,
                prior=prior,
                view_weights=weights,
                mode=self._config.hypothesis_mode,
            )
            results.append(result)
            prior = result.depth.numpy()
            weights = result.view_weights
            previous_scale = stage.scale
        return ModelOutput(results)

    def loss(
        self,
        output: ModelOutput,
        gt_depth: np.ndarray,
        valid: np.ndarray | None = None,
    ) -> LossTerms:
        """Inverse-depth loss of every iteration against downsampled truth."""
        gt_depth = np.asarray(gt_depth)
        if valid is None:
            valid = np.isfinite(gt_depth) & (gt_depth > 0)
        terms = LossTerms()
        for rank, (stage, result) in enumerate(
            zip(self._config.stages, output.stages, strict=True)
        ):
            gt = downsample_nearest(gt_depth, stage.scale)
            mask = downsample_nearest(valid, stage.scale)
            for depth in result.depths:
                terms.add(rank, inverse_depth_loss(depth, gt, mask))
        return terms

    def infer(self, scene: Scene) -> np.ndarray:
        """Return the final depth map."""
        return self.forward(scene).depth.numpy()

    def evaluate(
        self,
        scene: Scene,
        gt_depth: np.ndarray,
        output: ModelOutput | None = None,
    ) -> DepthMetrics:
        """Metrics of the final depth, in units of the coarsest sweep step."""
        output = self.forward(scene) if output is None else output
        coarsest = self._config.stages[0].hypotheses
        interval = (scene.d_max - scene.d_min) / max(coarsest - 1, 1)
        return evaluate_depth(output.depth.numpy(), gt_depth, None, interval)

    def checkpoint(self) -> Checkpoint:
        """Snapshot the parameters and the configuration."""
        return checkpoint_from_state(
            self.state_dict(),
            {"model": config_to_dict(self._config), "seed": self._seed},
        )

    @classmethod
    def from_checkpoint(
        cls, checkpoint: Checkpoint, dtype: npt.DTypeLike = DEFAULT_DTYPE
    ) -> Costformer:
        """Rebuild a model and load the stored parameters."""
        try:
            config = model_config_from_dict(checkpoint.config["model"])
            seed = int(checkpoint.config.get("seed", 0))
        except (KeyError, TypeError) as error:
            raise CheckpointError("checkpoint holds no model config") from error
        model = cls(config, seed=seed, dtype=dtype)
        model.load_state_dict(checkpoint.params)
        logger.debug("restored %d tensors", len(checkpoint.params))
        return model

