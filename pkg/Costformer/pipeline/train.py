"""Gradient-descent training on synthetic scenes."""

from __future__ import annotations

import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from Costformer.app import Costformer
from Costformer.errors import DivergenceError, DomainError
from Costformer.pipeline.checkpoint import Checkpoint
from Costformer.pipeline.config import Config
from Costformer.pipeline.scene import SyntheticScene
from Costformer.regression import loss_objective, total_loss
from Costformer.tensor_core import Tensor
from Costformer.tensor_core.optim import Adam

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TrainResult:
    """Trained model, its checkpoint and the loss of every step."""

    model: Costformer
    checkpoint: Checkpoint
    losses: list[float]


def train(
    scenes: Sequence[SyntheticScene],
    config: Config,
    seed: int,
    model: Costformer | None = None,
) -> TrainResult:
    """Run ``config.train.steps`` Adam steps cycling through ``scenes``.

    Raises :class:`DivergenceError` as soon as a loss is not finite; the
    parameters then hold the values of the last finite step.
    """
    if not scenes:
        raise DomainError("training needs at least one scene")
    if model is None:
        model = Costformer(config.model, seed=seed)
    schedule = config.train
    optimizer = Adam(model.parameters(), lr=schedule.lr)
    losses: list[float] = []
    last_finite: float | None = None
    started = time.perf_counter()
    for step in range(schedule.steps):
        scene = scenes[step % len(scenes)]
        optimizer.zero_grad()
        output = model.forward(scene)
        terms = model.loss(output, scene.depth, scene.valid)
        value = total_loss(terms)
        if not np.isfinite(value):
            logger.error("loss %s at step %d, aborting", value, step)
            raise DivergenceError(step, last_finite)
        objective = loss_objective(terms)
        if isinstance(objective, Tensor):
            objective.backward()
        optimizer.step()
        losses.append(value)
        last_finite = value
        if step % schedule.log_every == 0 or step == schedule.steps - 1:
            stages = ", ".join(f"{total:.4f}" for total in terms.stage_totals())
            logger.info(
                "step %d/%d loss %.6f stages [%s] %.1fs",
                step + 1,
                schedule.steps,
                value,
                stages,
                time.perf_counter() - started,
            )
    return TrainResult(model, model.checkpoint(), losses)
