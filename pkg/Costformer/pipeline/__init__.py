"""Configuration, data, persistence and the per-stage loop.

Training, benchmarking and the self-test live in their own modules
(``train``, ``bench``, ``selftest``) because they build whole models.
"""

from Costformer.pipeline.checkpoint import (
    Checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from Costformer.pipeline.config import (
    Config,
    ModelConfig,
    RdactConfig,
    RrtConfig,
    SceneConfig,
    StageConfig,
    TrainConfig,
    dump_config,
    load_config,
)
from Costformer.pipeline.features import FeatureExtractor, extract_features
from Costformer.pipeline.scene import (
    SyntheticScene,
    generate_scene,
    generate_scenes,
    load_scene,
    save_scene,
)
from Costformer.pipeline.stage import StageParams, StageResult, run_stage

__all__ = [
    "Checkpoint",
    "Config",
    "FeatureExtractor",
    "ModelConfig",
    "RdactConfig",
    "RrtConfig",
    "SceneConfig",
    "StageConfig",
    "StageParams",
    "StageResult",
    "SyntheticScene",
    "TrainConfig",
    "dump_config",
    "extract_features",
    "generate_scene",
    "generate_scenes",
    "load_checkpoint",
    "load_config",
    "load_scene",
    "run_stage",
    "save_checkpoint",
    "save_scene",
]
