"""Window partitioning of token grids, shifted windows and relative indices.

Token grids are laid out ``[*grid, E]`` with any number of grid axes: the
depth-aware cost transformer uses ``(H*, W*, D*)`` and the regression
transformer uses ``(H, W)``. Tokens inside a window are flattened in
row-major order, so the last grid axis varies fastest.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple

import einops
import numpy as np

from Costformer.errors import DomainError, ShapeError
from Costformer.tensor_core import Tensor

MASK_VALUE = -1e9
PADDING_REGION = -1


@dataclass(frozen=True)
class WindowLayout:
    """Window placement resolved against a concrete grid."""

    grid: tuple[int, ...]
    window: tuple[int, ...]
    shift: tuple[int, ...]

    @property
    def ndim(self) -> int:
        """Number of grid axes."""
        return len(self.grid)

    @property
    def counts(self) -> tuple[int, ...]:
        """Windows along each axis, ``ceil(grid / window)``."""
        return tuple(
            math.ceil(g / w)
            for g, w in zip(self.grid, self.window, strict=True)
        )

    @property
    def padded(self) -> tuple[int, ...]:
        """Grid extents rounded up to whole windows."""
        return tuple(
            n * w for n, w in zip(self.counts, self.window, strict=True)
        )

    @property
    def window_count(self) -> int:
        """Total number of windows."""
        return math.prod(self.counts)

    @property
    def tokens_per_window(self) -> int:
        """Tokens in one window."""
        return math.prod(self.window)

    @property
    def shifted(self) -> bool:
        """Whether any axis is cyclically shifted."""
        return any(self.shift)


@dataclass(frozen=True)
class WindowSpec:
    """Configured window extents and whether the grid is shifted.

    A shifted spec moves the grid by half a window, rounded down, on
    every axis.
    """

    extents: tuple[int, ...]
    shifted: bool = False

    def __post_init__(self) -> None:
        """Normalize and check the extents."""
        extents = tuple(int(e) for e in self.extents)
        if not extents or any(e < 1 for e in extents):
            raise DomainError(
                f"window extents must be >= 1, got {self.extents}"
            )
        object.__setattr__(self, "extents", extents)

    @property
    def ndim(self) -> int:
        """Number of window axes."""
        return len(self.extents)

    @property
    def shift(self) -> tuple[int, ...]:
        """Cyclic shift per axis."""
        if not self.shifted:
            return (0,) * self.ndim
        return tuple(e // 2 for e in self.extents)

    def layout(self, grid: Sequence[int]) -> WindowLayout:
        """Resolve against ``grid``.

        Axes no longer than the window collapse to a single window with
        no shift, where a cyclic shift would only rotate the tokens.
        """
        grid = tuple(int(g) for g in grid)
        if len(grid) != self.ndim:
            raise ShapeError(
                f"grid {grid} does not match window {self.extents}"
            )
        window, shift = [], []
        for extent, size, offset in zip(
            grid, self.extents, self.shift, strict=True
        ):
            if extent <= size:
                window.append(extent)
                shift.append(0)
            else:
                window.append(size)
                shift.append(offset)
        return WindowLayout(grid, tuple(window), tuple(shift))


class PartitionedWindows(NamedTuple):
    """Windows ``[Nw, T, E]``, the additive mask and the layout used."""

    windows: Tensor
    mask: np.ndarray | None
    layout: WindowLayout


def token_count(grid: Sequence[int], window: Sequence[int]) -> int:
    """Number of windows covering ``grid``: the product of ``ceil(g / w)``."""
    return math.prod(
        math.ceil(g / w) for g, w in zip(grid, window, strict=True)
    )


def _patterns(ndim: int) -> tuple[str, str]:
    """Return the grid-to-windows rearrange pattern and its axis names."""
    grid_side = " ".join(f"(n{i} w{i})" for i in range(ndim))
    counts = " ".join(f"n{i}" for i in range(ndim))
    window = " ".join(f"w{i}" for i in range(ndim))
    return f"{grid_side} e", f"({counts}) ({window}) e"


def _lengths(layout: WindowLayout) -> dict[str, int]:
    """Axis lengths for the rearrange patterns of ``layout``."""
    lengths = {f"n{i}": n for i, n in enumerate(layout.counts)}
    lengths.update({f"w{i}": w for i, w in enumerate(layout.window)})
    return lengths


def _rolled_axes(layout: WindowLayout) -> tuple[list[int], list[int]]:
    """Shifts and axes that actually move."""
    axes = [i for i, s in enumerate(layout.shift) if s]
    return [layout.shift[i] for i in axes], axes


def region_labels(layout: WindowLayout) -> np.ndarray:
    """Label every position of the padded grid by its pre-shift region.

    Along a shifted axis of padded extent ``P`` the regions are the
    positions that land in ``[0, P - w)``, ``[P - w, P - s)`` and
    ``[P - s, P)`` after the shift. Padding gets a region of its own.
    """
    labels = np.zeros(layout.padded, dtype=np.int64)
    padding = np.zeros(layout.padded, dtype=bool)
    for axis, (extent, size, shift, full) in enumerate(
        zip(
            layout.grid,
            layout.window,
            layout.shift,
            layout.padded,
            strict=True,
        )
    ):
        index = np.arange(full)
        if shift:
            moved = (index - shift) % full
            axis_label = np.select(
                [moved < full - size, moved < full - shift], [0, 1], 2
            )
        else:
            axis_label = np.zeros(full, dtype=np.int64)
        view = [1] * layout.ndim
        view[axis] = full
        labels = labels * 3 + axis_label.reshape(view)
        padding |= (index >= extent).reshape(view)
    labels[padding] = PADDING_REGION
    return labels


def region_mask(layout: WindowLayout) -> np.ndarray | None:
    """Additive ``[Nw, T, T]`` mask between tokens of different regions.

    Returns ``None`` when every window holds a single region.
    """
    labels = region_labels(layout)
    shifts, axes = _rolled_axes(layout)
    if axes:
        labels = np.roll(labels, [-s for s in shifts], axes)
    grid_side, window_side = _patterns(layout.ndim)
    grouped = einops.rearrange(
        labels[..., None], f"{grid_side} -> {window_side}", **_lengths(layout)
    )[..., 0]
    differs = grouped[:, :, None] != grouped[:, None, :]
    if not differs.any():
        return None
    return np.where(differs, MASK_VALUE, 0.0)


def window_partition(x: Tensor, spec: WindowSpec) -> PartitionedWindows:
    """Split ``x[*grid, E]`` into windows, shifting first when ``spec`` does.

    The grid is zero-padded up to whole windows; the mask keeps tokens
    from attending across regions and to padding.
    """
    if x.ndim != spec.ndim + 1:
        raise ShapeError(f"tokens {x.shape} do not match window {spec.extents}")
    layout = spec.layout(x.shape[:-1])
    widths = [
        (0, p - g) for p, g in zip(layout.padded, layout.grid, strict=True)
    ]
    padded = x.pad([*widths, (0, 0)])
    shifts, axes = _rolled_axes(layout)
    if axes:
        padded = padded.roll([-s for s in shifts], axes)
    grid_side, window_side = _patterns(layout.ndim)
    windows = padded.rearrange(
        f"{grid_side} -> {window_side}", **_lengths(layout)
    )
    return PartitionedWindows(windows, region_mask(layout), layout)


def window_reverse(windows: Tensor, layout: WindowLayout) -> Tensor:
    """Undo :func:`window_partition`, returning ``[*grid, E]``."""
    expected = (layout.window_count, layout.tokens_per_window)
    if windows.ndim != 3 or windows.shape[:2] != expected:
        raise ShapeError(f"windows {windows.shape} do not match {expected}")
    grid_side, window_side = _patterns(layout.ndim)
    grid = windows.rearrange(
        f"{window_side} -> {grid_side}", **_lengths(layout)
    )
    shifts, axes = _rolled_axes(layout)
    if axes:
        grid = grid.roll(shifts, axes)
    if grid.shape[:-1] == layout.grid:
        return grid
    return grid[tuple(slice(0, g) for g in layout.grid)]


def window_coordinates(window: Sequence[int]) -> np.ndarray:
    """Return ``[ndim, T]`` integer coordinates of the tokens of a window."""
    grids = np.meshgrid(*[np.arange(w) for w in window], indexing="ij")
    return np.stack([g.reshape(-1) for g in grids])


def bias_table_size(table: Sequence[int]) -> int:
    """Entries of a relative-bias table for windows up to ``table``."""
    return math.prod(2 * t - 1 for t in table)


def relative_position_index(
    window: Sequence[int], table: Sequence[int] | None = None
) -> np.ndarray:
    """Map each token pair of ``window`` to its relative-bias table row.

    ``table`` gives the extents the table was sized for; a window clamped
    smaller than it indexes a subset of the same rows.
    """
    table = tuple(window) if table is None else tuple(table)
    if len(table) != len(window) or any(
        w > t for w, t in zip(window, table, strict=True)
    ):
        raise ShapeError(f"window {tuple(window)} exceeds table {table}")
    coords = window_coordinates(window)
    relative = coords[:, :, None] - coords[:, None, :]
    index = np.zeros(relative.shape[1:], dtype=np.int64)
    for axis, extent in enumerate(table):
        index = index * (2 * extent - 1) + relative[axis] + extent - 1
    return index
