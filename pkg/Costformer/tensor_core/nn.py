"""Parameter containers and initializers shared by every learned block."""

from __future__ import annotations

import zlib
from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy import stats

from Costformer.errors import ShapeError
from Costformer.tensor_core.tensor import DEFAULT_DTYPE, Parameter


@dataclass(eq=False)
class LinearParams:
    """Weight ``[in_dim, out_dim]`` and optional bias ``[out_dim]``."""

    weight: Parameter
    bias: Parameter | None = None

    def __post_init__(self) -> None:
        """Check the declared dimensions agree."""
        if self.weight.ndim != 2:
            raise ShapeError(f"weight must be 2-D, got {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (self.out_dim,):
            raise ShapeError(
                f"bias {self.bias.shape} does not match out_dim {self.out_dim}"
            )

    @property
    def in_dim(self) -> int:
        """Extent of the input axis."""
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        """Extent of the output axis."""
        return self.weight.shape[1]

    def parameters(self) -> Iterator[tuple[str, Parameter]]:
        """Yield ``(name, parameter)`` pairs."""
        yield "weight", self.weight
        if self.bias is not None:
            yield "bias", self.bias


@dataclass(eq=False)
class LayerNormParams:
    """Scale and shift of a layer normalization."""

    gamma: Parameter
    beta: Parameter

    def parameters(self) -> Iterator[tuple[str, Parameter]]:
        """Yield ``(name, parameter)`` pairs."""
        yield "gamma", self.gamma
        yield "beta", self.beta


class Module:
    """Base class that discovers parameters stored on attributes.

    Attributes holding a :class:`Parameter`, :class:`LinearParams`,
    :class:`LayerNormParams`, another module, or a list of those are walked
    in assignment order, which makes parameter names stable across runs.
    """

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        """Return every parameter keyed by its dotted path."""
        found: dict[str, Parameter] = {}
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            _collect(f"{prefix}{name}", value, found)
        return found

    def parameters(self) -> list[Parameter]:
        """Return every parameter in a stable order."""
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        """Clear the gradient of every parameter."""
        for param in self.parameters():
            param.zero_grad()

    def astype(self, dtype: npt.DTypeLike) -> Module:
        """Cast every parameter to ``dtype`` in place and return self."""
        for param in self.parameters():
            param.cast(dtype)
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        """Copy every parameter value out by name."""
        return {name: p.numpy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Assign values by name; names and shapes must match exactly."""
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ShapeError(
                f"state mismatch: missing={missing} unexpected={unexpected}"
            )
        for name, param in params.items():
            param.assign(state[name])


def _collect(path: str, value: object, found: dict[str, Parameter]) -> None:
    """Add parameters reachable from ``value`` under ``path``."""
    if isinstance(value, Parameter):
        found[path] = value
    elif isinstance(value, (LinearParams, LayerNormParams)):
        for name, param in value.parameters():
            found[f"{path}.{name}"] = param
    elif isinstance(value, Module):
        found.update(value.named_parameters(prefix=f"{path}."))
    elif isinstance(value, (list, tuple)):
        for index, item in enumerate(value):
            _collect(f"{path}.{index}", item, found)


def component_rng(seed: int, name: str) -> np.random.Generator:
    """Return a generator that depends only on ``seed`` and ``name``.

    Components draw their initial values from their own stream so that
    switching a block off never changes how the others are initialized.
    """
    key = zlib.crc32(name.encode())
    sequence = np.random.SeedSequence(seed, spawn_key=(key,))
    return np.random.default_rng(sequence)


def init_linear(
    rng: np.random.Generator,
    in_dim: int,
    out_dim: int,
    bias: bool = True,
    zero: bool = False,
    dtype: npt.DTypeLike = DEFAULT_DTYPE,
) -> LinearParams:
    """Create linear parameters with uniform fan-in scaling or zeros."""
    if zero:
        weight = np.zeros((in_dim, out_dim))
    else:
        bound = 1.0 / np.sqrt(in_dim)
        weight = rng.uniform(-bound, bound, size=(in_dim, out_dim))
    return LinearParams(
        weight=Parameter(weight, dtype=dtype),
        bias=Parameter(np.zeros(out_dim), dtype=dtype) if bias else None,
    )


def init_layer_norm(
    dim: int, dtype: npt.DTypeLike = DEFAULT_DTYPE
) -> LayerNormParams:
    """Create unit-scale, zero-shift layer normalization parameters."""
    return LayerNormParams(
        gamma=Parameter(np.ones(dim), dtype=dtype),
        beta=Parameter(np.zeros(dim), dtype=dtype),
    )


def trunc_normal(
    rng: np.random.Generator,
    shape: tuple[int, ...],
    std: float = 0.02,
    dtype: npt.DTypeLike = DEFAULT_DTYPE,
) -> Parameter:
    """Draw a parameter from a normal truncated at two deviations."""
    values = stats.truncnorm.rvs(
        -2.0, 2.0, scale=std, size=shape, random_state=rng
    )
    return Parameter(values, dtype=dtype)
