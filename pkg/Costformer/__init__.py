"""Costformer model creation."""  # noqa: N999

from __future__ import annotations

import logging
import os

import numpy.typing as npt

from Costformer.app import Costformer
from Costformer.pipeline.config import Config, ModelConfig, default_seed
from Costformer.tensor_core.tensor import DEFAULT_DTYPE

__version__ = "0.1.0"

DEFAULT_LOG_LEVEL = "INFO"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _log_level_name() -> str:
    """Return the logging level name used by the package."""
    return os.environ.get("COSTFORMER_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper()


def configure_logging(verbose: bool = False) -> None:
    """Send package logs to stderr at the configured level."""
    level_name = "DEBUG" if verbose else _log_level_name()
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger(__name__).setLevel(level)


def create_model(
    config: Config | ModelConfig | None = None,
    seed: int | None = None,
    dtype: npt.DTypeLike = DEFAULT_DTYPE,
) -> Costformer:
    """Create and initialize the model."""
    if config is None:
        config = ModelConfig()
    elif isinstance(config, Config):
        config = config.model
    seed = default_seed() if seed is None else seed
    model = Costformer(config, seed=seed, dtype=dtype)
    logging.getLogger(__name__).debug(
        "created model with %d parameters (seed %d, rdact=%s, rrt=%s)",
        sum(param.size for param in model.parameters()),
        seed,
        config.use_rdact,
        config.use_rrt,
    )
    return model
