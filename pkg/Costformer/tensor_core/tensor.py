"""Dense tensor type with a reverse-mode gradient tape."""

from __future__ import annotations

import re
from collections.abc import Callable, Sequence
from typing import Any

import einops
import numpy as np
import numpy.typing as npt

from Costformer.errors import DomainError, ShapeError

DEFAULT_DTYPE = np.float32

# backward closures map the output gradient to one gradient per parent
type BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]
type Index = Any


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _frozen(array: np.ndarray) -> np.ndarray:
    """Mark an array read-only and return it."""
    array.flags.writeable = False
    return array


class Tensor:
    """Immutable n-dimensional float array that records how it was made.

    Tensors created from numpy data keep a floating dtype of that data
    (float32 or float64); anything else is cast to float32. When any input
    of an operation requires a gradient, the result remembers its parents
    and a backward closure so :meth:`backward` can walk the graph.
    """

    def __init__(
        self,
        data: npt.ArrayLike,
        requires_grad: bool = False,
        dtype: npt.DTypeLike | None = None,
    ) -> None:
        """Copy ``data`` into a new read-only tensor."""
        array = np.array(data, dtype=dtype, copy=True)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(DEFAULT_DTYPE)
        self._data = _frozen(array)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @classmethod
    def _wrap(
        cls,
        array: np.ndarray,
        parents: Sequence[Tensor] = (),
        backward: BackwardFn | None = None,
    ) -> Tensor:
        """Build an op result without copying ``array``."""
        out = cls.__new__(cls)
        out._data = _frozen(np.asarray(array))
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        return out

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the values."""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        """Extents of every axis."""
        return self._data.shape

    @property
    def ndim(self) -> int:
        """Rank of the tensor."""
        return self._data.ndim

    @property
    def dtype(self) -> np.dtype:
        """Floating dtype of the values."""
        return self._data.dtype

    @property
    def size(self) -> int:
        """Number of elements."""
        return self._data.size

    def __repr__(self) -> str:
        """Return a short description."""
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad})"

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the values."""
        return np.array(self._data)

    def item(self) -> float:
        """Return the single value of a one-element tensor."""
        return float(self._data.reshape(-1)[0])

    def detach(self) -> Tensor:
        """Return the same values cut from the graph."""
        return Tensor._wrap(self._data)

    def astype(self, dtype: npt.DTypeLike) -> Tensor:
        """Cast to another floating dtype, keeping the gradient path."""
        source = self.dtype

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (grad.astype(source),)

        return Tensor._wrap(self._data.astype(dtype), (self,), backward)

    # ------------------------------------------------------------------ graph
    def backward(self, grad: npt.ArrayLike | None = None) -> None:
        """Accumulate ``d self / d leaf`` into ``leaf.grad`` for every leaf."""
        if not self.requires_grad:
            return
        if grad is None:
            if self.size != 1:
                raise ShapeError("backward() without grad needs a scalar")
            seed = np.ones_like(self._data)
        else:
            seed = np.asarray(grad, dtype=self.dtype).reshape(self.shape)

        pending: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(_topological_order(self)):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue
            if node._backward is None:
                node.grad = (
                    node_grad if node.grad is None else node.grad + node_grad
                )
                continue
            for parent, parent_grad in zip(
                node._parents, node._backward(node_grad), strict=True
            ):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + parent_grad
                else:
                    pending[key] = parent_grad

    # ------------------------------------------------------------ arithmetic
    def _lift(self, other: Tensor | npt.ArrayLike) -> Tensor:
        """Turn scalars and arrays into constants of this dtype."""
        if isinstance(other, Tensor):
            return other
        return Tensor._wrap(np.asarray(other, dtype=self.dtype))

    def __add__(self, other: Tensor | npt.ArrayLike) -> Tensor:
        """Elementwise sum with broadcasting."""
        other = self._lift(other)
        a_shape, b_shape = self.shape, other.shape

        def backward(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            return _unbroadcast(grad, a_shape), _unbroadcast(grad, b_shape)

        return Tensor._wrap(self._data + other._data, (self, other), backward)

    def __radd__(self, other: npt.ArrayLike) -> Tensor:
        """Elementwise sum with a constant on the left."""
        return self._lift(other) + self

    def __neg__(self) -> Tensor:
        """Elementwise negation."""

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (-grad,)

        return Tensor._wrap(-self._data, (self,), backward)

    def __sub__(self, other: Tensor | npt.ArrayLike) -> Tensor:
        """Elementwise difference with broadcasting."""
        other = self._lift(other)
        a_shape, b_shape = self.shape, other.shape

        def backward(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            return _unbroadcast(grad, a_shape), _unbroadcast(-grad, b_shape)

        return Tensor._wrap(self._data - other._data, (self, other), backward)

    def __rsub__(self, other: npt.ArrayLike) -> Tensor:
        """Elementwise difference with a constant on the left."""
        return self._lift(other) - self

    def __mul__(self, other: Tensor | npt.ArrayLike) -> Tensor:
        """Elementwise product with broadcasting."""
        other = self._lift(other)
        a, b = self._data, other._data

        def backward(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            return (
                _unbroadcast(grad * b, a.shape),
                _unbroadcast(grad * a, b.shape),
            )

        return Tensor._wrap(a * b, (self, other), backward)

    def __rmul__(self, other: npt.ArrayLike) -> Tensor:
        """Elementwise product with a constant on the left."""
        return self._lift(other) * self

    def __truediv__(self, other: Tensor | npt.ArrayLike) -> Tensor:
        """Elementwise quotient with broadcasting."""
        other = self._lift(other)
        a, b = self._data, other._data
        out = a / b

        def backward(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            return (
                _unbroadcast(grad / b, a.shape),
                _unbroadcast(-grad * out / b, b.shape),
            )

        return Tensor._wrap(out, (self, other), backward)

    def __rtruediv__(self, other: npt.ArrayLike) -> Tensor:
        """Elementwise quotient with a constant numerator."""
        return self._lift(other) / self

    def __matmul__(self, other: Tensor) -> Tensor:
        """Batched matrix product over the last two axes."""
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError("matmul operands need rank >= 2")
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(
                f"matmul inner extents differ: {self.shape} @ {other.shape}"
            )
        a, b = self._data, other._data

        def backward(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            return (
                _unbroadcast(grad @ np.swapaxes(b, -1, -2), a.shape),
                _unbroadcast(np.swapaxes(a, -1, -2) @ grad, b.shape),
            )

        return Tensor._wrap(a @ b, (self, other), backward)

    # ------------------------------------------------------------ reductions
    def sum(
        self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False
    ) -> Tensor:
        """Sum over ``axis`` (all axes when ``None``)."""
        shape = self.shape
        axes = _normalize_axes(axis, self.ndim)

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            if not keepdims:
                grad = np.expand_dims(grad, axes)
            return (np.broadcast_to(grad, shape).copy(),)

        out = self._data.sum(axis=axes, keepdims=keepdims)
        out = np.asarray(out, dtype=self.dtype)
        return Tensor._wrap(out, (self,), backward)

    def mean(
        self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False
    ) -> Tensor:
        """Arithmetic mean over ``axis``."""
        axes = _normalize_axes(axis, self.ndim)
        count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axes, keepdims=keepdims) * (1.0 / count)

    # --------------------------------------------------------------- unaries
    def exp(self) -> Tensor:
        """Elementwise exponential."""
        out = np.exp(self._data)

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (grad * out,)

        return Tensor._wrap(out, (self,), backward)

    def log(self) -> Tensor:
        """Elementwise natural logarithm."""
        x = self._data

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (grad / x,)

        return Tensor._wrap(np.log(x), (self,), backward)

    def sqrt(self) -> Tensor:
        """Elementwise square root."""
        out = np.sqrt(self._data)

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (grad * 0.5 / out,)

        return Tensor._wrap(out, (self,), backward)

    def abs(self) -> Tensor:
        """Elementwise absolute value."""
        x = self._data

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (grad * np.sign(x),)

        return Tensor._wrap(np.abs(x), (self,), backward)

    def sigmoid(self) -> Tensor:
        """Elementwise logistic function."""
        out = _stable_sigmoid(self._data)

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (grad * out * (1.0 - out),)

        return Tensor._wrap(out, (self,), backward)

    def relu(self) -> Tensor:
        """Elementwise rectifier."""
        x = self._data

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (grad * (x > 0),)

        return Tensor._wrap(np.maximum(x, 0), (self,), backward)

    def clip_min(self, floor: float) -> Tensor:
        """Elementwise ``max(x, floor)``; gradient passes above the floor."""
        x = self._data

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (grad * (x > floor),)

        out = np.maximum(x, np.asarray(floor, dtype=self.dtype))
        return Tensor._wrap(out, (self,), backward)

    # ----------------------------------------------------------- structural
    def reshape(self, *shape: int | tuple[int, ...]) -> Tensor:
        """Return the same values with new extents."""
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        source = self.shape

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (grad.reshape(source),)

        return Tensor._wrap(self._data.reshape(shape), (self,), backward)

    def transpose(self, *axes: int) -> Tensor:
        """Permute axes (reverse them when none are given)."""
        order = axes if axes else tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(order))

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (np.transpose(grad, inverse),)

        return Tensor._wrap(np.transpose(self._data, order), (self,), backward)

    def swapaxes(self, first: int, second: int) -> Tensor:
        """Exchange two axes."""
        order = list(range(self.ndim))
        order[first], order[second] = order[second], order[first]
        return self.transpose(*order)

    def broadcast_to(self, shape: tuple[int, ...]) -> Tensor:
        """Repeat singleton axes up to ``shape``."""
        source = self.shape

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (_unbroadcast(grad, source),)

        return Tensor._wrap(
            np.broadcast_to(self._data, shape).copy(), (self,), backward
        )

    def __getitem__(self, index: Index) -> Tensor:
        """Basic or advanced indexing; gradients scatter back."""
        shape, dtype = self.shape, self.dtype
        fancy = _has_array_index(index)

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            full = np.zeros(shape, dtype=dtype)
            if fancy:
                np.add.at(full, index, grad)
            else:
                full[index] += grad
            return (full,)

        return Tensor._wrap(np.asarray(self._data[index]), (self,), backward)

    def pad(self, widths: Sequence[tuple[int, int]]) -> Tensor:
        """Zero-pad each axis by ``(before, after)`` entries."""
        widths = [tuple(w) for w in widths]
        if len(widths) != self.ndim:
            raise ShapeError("pad widths must cover every axis")
        if all(w == (0, 0) for w in widths):
            return self
        crop = tuple(
            slice(before, before + extent)
            for (before, _), extent in zip(widths, self.shape, strict=True)
        )

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (grad[crop],)

        return Tensor._wrap(np.pad(self._data, widths), (self,), backward)

    def roll(self, shift: Sequence[int], axis: Sequence[int]) -> Tensor:
        """Cyclically shift along ``axis`` by ``shift`` positions."""
        shift, axis = tuple(shift), tuple(axis)
        back = tuple(-s for s in shift)

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (np.roll(grad, back, axis),)

        return Tensor._wrap(np.roll(self._data, shift, axis), (self,), backward)

    def rearrange(self, pattern: str, **axes_lengths: int) -> Tensor:
        """Apply an einops ``rearrange`` pattern with a gradient path."""
        left, right = (side.strip() for side in pattern.split("->"))
        known = dict(axes_lengths)
        tokens = _pattern_tokens(left)
        for token, extent in zip(tokens, self.shape, strict=True):
            if not token.startswith("("):
                known[token] = extent
        inverse = f"{right} -> {left}"

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (einops.rearrange(grad, inverse, **known),)

        out = einops.rearrange(self._data, pattern, **axes_lengths)
        return Tensor._wrap(np.ascontiguousarray(out), (self,), backward)


def _topological_order(root: Tensor) -> list[Tensor]:
    """Return graph nodes with every parent before its children."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _normalize_axes(
    axis: int | tuple[int, ...] | None, ndim: int
) -> tuple[int, ...]:
    """Turn an axis argument into a tuple of non-negative axes."""
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    normalized = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise DomainError(f"axis {a} out of range for rank {ndim}")
        normalized.append(a % ndim)
    return tuple(normalized)


def _has_array_index(index: Index) -> bool:
    """Return whether an index uses integer or boolean arrays."""
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (np.ndarray, list)) for p in parts)


def _pattern_tokens(side: str) -> list[str]:
    """Split one side of an einops pattern into axis tokens."""
    return re.findall(r"\([^)]*\)|\S+", side)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function without overflow for large ``|x|``."""
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)


class Parameter(Tensor):
    """Trainable leaf tensor whose values an optimizer may replace."""

    def __init__(
        self, data: npt.ArrayLike, dtype: npt.DTypeLike = None
    ) -> None:
        """Create a leaf that requires a gradient."""
        super().__init__(data, requires_grad=True, dtype=dtype)

    def assign(self, values: npt.ArrayLike) -> None:
        """Replace the values in place of this parameter object."""
        array = np.array(values, dtype=self.dtype, copy=True)
        if array.shape != self.shape:
            raise ShapeError(f"cannot assign {array.shape} to {self.shape}")
        self._data = _frozen(array)

    def cast(self, dtype: npt.DTypeLike) -> None:
        """Change the stored dtype, keeping the parameter identity."""
        self._data = _frozen(self._data.astype(dtype))
        self.grad = None

    def zero_grad(self) -> None:
        """Forget the accumulated gradient."""
        self.grad = None


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along an existing axis."""
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(grad: np.ndarray) -> list[np.ndarray]:
        return np.split(grad, bounds, axis=axis)

    return Tensor._wrap(
        np.concatenate([t.data for t in tensors], axis=axis), tensors, backward
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along a new axis."""
    if not tensors:
        raise ShapeError("stack needs at least one tensor")
    axis = axis % (tensors[0].ndim + 1)

    def backward(grad: np.ndarray) -> list[np.ndarray]:
        return [np.take(grad, i, axis=axis) for i in range(len(tensors))]

    return Tensor._wrap(
        np.stack([t.data for t in tensors], axis=axis), tensors, backward
    )


def where(condition: npt.ArrayLike, a: Tensor, b: Tensor) -> Tensor:
    """Pick from ``a`` where ``condition`` holds and from ``b`` elsewhere."""
    mask = np.asarray(condition, dtype=bool)
    a_shape, b_shape = a.shape, b.shape

    def backward(grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        zero = np.zeros_like(grad)
        return (
            _unbroadcast(np.where(mask, grad, zero), a_shape),
            _unbroadcast(np.where(mask, zero, grad), b_shape),
        )

    return Tensor._wrap(np.where(mask, a.data, b.data), (a, b), backward)
