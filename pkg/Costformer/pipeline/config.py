"""Typed configuration with TOML loading and dumping."""

from __future__ import annotations

import dataclasses
import os
import pathlib
import tomllib
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

import tomli_w

from Costformer.errors import ConfigError

DEFAULT_SEED = 0


def _positive(where: str, **values: int | float) -> None:
    """Reject non-positive values."""
    for name, value in values.items():
        if value <= 0:
            raise ConfigError(f"{where}.{name} must be positive, got {value}")


@dataclass(frozen=True)
class RdactConfig:
    """Depth-aware cost transformer of one stage."""

    pairs: int = 2
    dim: int = 8
    heads: int = 2
    patch: tuple[int, int, int] = (4, 4, 1)
    window: tuple[int, int, int] = (7, 7, 2)

    def __post_init__(self) -> None:
        """Check extents and head split."""
        _positive("rdact", pairs=self.pairs, dim=self.dim, heads=self.heads)
        if len(self.patch) != 3 or len(self.window) != 3:
            raise ConfigError("rdact.patch and rdact.window need three extents")
        if min(self.patch) < 1 or min(self.window) < 1:
            raise ConfigError("rdact.patch and rdact.window must be >= 1")
        if self.patch[2] != 1:
            raise ConfigError("rdact.patch keeps depth at 1")
        if self.dim % self.heads:
            raise ConfigError(
                f"rdact.heads {self.heads} must divide dim {self.dim}"
            )


@dataclass(frozen=True)
class RrtConfig:
    """Regression transformer of one iteration."""

    dim: int
    pairs: int = 2
    heads: int = 2
    window: int = 8
    patch: int = 1

    def __post_init__(self) -> None:
        """Check extents and head split."""
        _positive(
            "rrt",
            dim=self.dim,
            pairs=self.pairs,
            heads=self.heads,
            window=self.window,
            patch=self.patch,
        )
        if self.dim % self.heads:
            raise ConfigError(
                f"rrt.heads {self.heads} must divide dim {self.dim}"
            )


@dataclass(frozen=True)
class StageConfig:
    """One resolution stage; ``index`` 3 is the coarsest."""

    index: int
    scale: int
    iterations: int
    hypotheses: int
    channels: int
    groups: int
    rrt: tuple[RrtConfig, ...]
    rdact: RdactConfig = field(default_factory=RdactConfig)
    spatial_kernel: int = 3

    def __post_init__(self) -> None:
        """Check the stage is self-consistent."""
        where = f"stage {self.index}"
        _positive(
            where,
            scale=self.scale,
            iterations=self.iterations,
            hypotheses=self.hypotheses,
            channels=self.channels,
            groups=self.groups,
            spatial_kernel=self.spatial_kernel,
        )
        if self.channels % self.groups:
            raise ConfigError(
                f"{where}: groups {self.groups} must divide {self.channels}"
            )
        if len(self.rrt) != self.iterations:
            raise ConfigError(
                f"{where}: one rrt block per iteration, got {len(self.rrt)} "
                f"for {self.iterations}"
            )
        if self.spatial_kernel % 2 == 0:
            raise ConfigError(f"{where}: spatial_kernel must be odd")


def default_stages() -> tuple[StageConfig, ...]:
    """Three stages at 1/4, 1/2 and full resolution, coarsest first."""
    return (
        StageConfig(
            index=3,
            scale=4,
            iterations=2,
            hypotheses=16,
            channels=32,
            groups=8,
            rdact=RdactConfig(pairs=4, dim=8),
            rrt=(RrtConfig(dim=32), RrtConfig(dim=64)),
        ),
        StageConfig(
            index=2,
            scale=2,
            iterations=2,
            hypotheses=8,
            channels=16,
            groups=8,
            rdact=RdactConfig(pairs=2, dim=8),
            rrt=(RrtConfig(dim=16), RrtConfig(dim=16)),
        ),
        StageConfig(
            index=1,
            scale=1,
            iterations=1,
            hypotheses=4,
            channels=8,
            groups=4,
            rdact=RdactConfig(pairs=2, dim=4),
            rrt=(RrtConfig(dim=8),),
        ),
    )


@dataclass(frozen=True)
class ModelConfig:
    """Stages plus the switches that ablate the transformers."""

    stages: tuple[StageConfig, ...] = field(default_factory=default_stages)
    use_rdact: bool = True
    use_rrt: bool = True
    attention_variant: str = "depth_spatial"
    hypothesis_mode: str = "inverse-depth"

    def __post_init__(self) -> None:
        """Check stage ordering and enumerated options."""
        if not self.stages:
            raise ConfigError("model needs at least one stage")
        scales = [stage.scale for stage in self.stages]
        if scales != sorted(scales, reverse=True) or len(set(scales)) != len(
            scales
        ):
            raise ConfigError(
                f"stage scales must decrease strictly, got {scales}"
            )
        for scale in scales:
            if scale & (scale - 1):
                raise ConfigError(f"stage scale {scale} is not a power of two")
        if self.attention_variant not in ("depth_spatial", "spatial"):
            raise ConfigError(
                f"unknown attention_variant {self.attention_variant!r}"
            )
        if self.hypothesis_mode not in ("inverse-depth", "linear"):
            raise ConfigError(
                f"unknown hypothesis_mode {self.hypothesis_mode!r}"
            )

    @property
    def iteration_count(self) -> int:
        """Iterations summed over stages."""
        return sum(stage.iterations for stage in self.stages)

    def ablated(self) -> ModelConfig:
        """Return the same model with both transformers switched off."""
        return dataclasses.replace(self, use_rdact=False, use_rrt=False)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer schedule."""

    steps: int = 500
    lr: float = 1e-3
    log_every: int = 50

    def __post_init__(self) -> None:
        """Check the schedule."""
        if self.steps < 0:
            raise ConfigError(f"train.steps must be >= 0, got {self.steps}")
        if self.lr < 0:
            raise ConfigError(f"train.lr must be >= 0, got {self.lr}")
        _positive("train", log_every=self.log_every)


@dataclass(frozen=True)
class SceneConfig:
    """Synthetic training scenes."""

    height: int = 64
    width: int = 64
    sources: int = 2
    planes: int = 1
    scenes: int = 1
    d_min: float = 2.0
    d_max: float = 6.0

    def __post_init__(self) -> None:
        """Check extents and the depth range."""
        _positive(
            "scene",
            height=self.height,
            width=self.width,
            sources=self.sources,
            planes=self.planes,
            scenes=self.scenes,
        )
        if self.planes > 2:
            raise ConfigError("scene.planes supports 1 or 2")
        if not 0 < self.d_min < self.d_max:
            raise ConfigError(
                f"scene depth range [{self.d_min}, {self.d_max}] is invalid"
            )


@dataclass(frozen=True)
class Config:
    """Everything a run needs."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)


_NESTED: dict[str, type] = {
    "model": ModelConfig,
    "train": TrainConfig,
    "scene": SceneConfig,
    "stages": StageConfig,
    "rdact": RdactConfig,
    "rrt": RrtConfig,
}


def _build(cls: type, raw: object, where: str) -> Any:
    """Construct ``cls`` from a mapping, rejecting unknown keys."""
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{where} must be a table")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    values: dict[str, Any] = {}
    for name, value in raw.items():
        nested = _NESTED.get(name)
        if nested is not None and isinstance(value, list):
            values[name] = tuple(
                _build(nested, item, f"{where}.{name}[{index}]")
                for index, item in enumerate(value)
            )
        elif nested is not None:
            values[name] = _build(nested, value, f"{where}.{name}")
        elif isinstance(value, list):
            values[name] = tuple(value)
        else:
            values[name] = value
    try:
        return cls(**values)
    except TypeError as error:
        raise ConfigError(f"{where}: {error}") from error


def config_from_dict(raw: Mapping[str, Any]) -> Config:
    """Build a :class:`Config`; absent sections keep their defaults."""
    return _build(Config, raw, "config")


def model_config_from_dict(raw: Mapping[str, Any]) -> ModelConfig:
    """Build a :class:`ModelConfig` from its table."""
    return _build(ModelConfig, raw, "model")


def _plain(value: Any) -> Any:
    """Turn dataclasses and tuples into TOML/JSON-ready values."""
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {
            f.name: _plain(getattr(value, f.name))
            for f in dataclasses.fields(value)
        }
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value


def config_to_dict(config: Config | ModelConfig) -> dict[str, Any]:
    """Return the configuration as nested plain values."""
    return _plain(config)


def load_config(path: str | pathlib.Path | None) -> Config:
    """Read a TOML file merged onto the defaults; ``None`` gives defaults.

    A ``[[model.stages]]`` list replaces the default stages as a whole.
    """
    if path is None:
        return Config()
    path = pathlib.Path(path)
    try:
        with path.open("rb") as handle:
            raw = tomllib.load(handle)
    except FileNotFoundError as error:
        raise ConfigError(f"config file {path} does not exist") from error
    except tomllib.TOMLDecodeError as error:
        raise ConfigError(f"{path}: {error}") from error
    return config_from_dict(raw)


def dump_config(config: Config) -> str:
    """Render the configuration as TOML."""
    return tomli_w.dumps(config_to_dict(config))


def default_seed() -> int:
    """Return the seed from ``COSTFORMER_SEED``, or the built-in default."""
    raw = os.environ.get("COSTFORMER_SEED")
    if raw is None:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError as error:
        raise ConfigError(
            f"COSTFORMER_SEED must be an integer, got {raw!r}"
        ) from error
