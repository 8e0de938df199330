"""Exception types raised across the package."""

from __future__ import annotations


class CostformerError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(CostformerError, ValueError):
    """Extents or dimensions of the inputs do not line up."""


class DomainError(CostformerError, ValueError):
    """A value lies outside the documented domain of an operation."""


class ConfigError(CostformerError, ValueError):
    """A configuration file or mapping is malformed."""


class CheckpointError(CostformerError):
    """A checkpoint file cannot be decoded."""


class DataFileError(CostformerError):
    """An image, depth map, camera or scene file cannot be read."""


class DivergenceError(CostformerError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, last_finite_loss: float | None) -> None:
        """Record where the loss stopped being finite."""
        self.step = step
        self.last_finite_loss = last_finite_loss
        super().__init__(
            f"loss became non-finite at step {step} "
            f"(last finite loss: {last_finite_loss})"
        )
