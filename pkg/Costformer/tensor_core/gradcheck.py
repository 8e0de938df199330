"""Central finite differences, the oracle every backward map is held to."""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from Costformer.errors import DomainError
from Costformer.tensor_core.tensor import Parameter, Tensor

DEFAULT_EPS = 1e-3
# step for ops with ReLU or bilinear kinks: a 1e-3 nudge regularly
# carries some unit or sample across one
KINKED_EPS = 1e-5
SMALL_GRADIENT_FLOOR = 1e-2


@dataclass(frozen=True)
class GradCheckReport:
    """Worst disagreement between analytic and numeric gradients.

    ``max_rel_error`` is the largest per-element ``|a - n| / max(|a|, |n|)``.
    Entries smaller than ``SMALL_GRADIENT_FLOOR`` times the largest
    magnitude are measured against that floor instead.
    """

    max_abs_error: float
    max_rel_error: float
    num_elements: int

    def passed(self, rel_tol: float = 1e-3) -> bool:
        """Return whether the relative error is within ``rel_tol``."""
        return self.max_rel_error <= rel_tol


def finite_diff_grad(
    f: Callable[[np.ndarray], float],
    x: npt.ArrayLike,
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    """Estimate ``df/dx`` by central differences in double precision."""
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    point = np.array(x, dtype=np.float64)
    grad = np.zeros_like(point)
    flat_point, flat_grad = point.reshape(-1), grad.reshape(-1)
    for i in range(flat_point.size):
        original = flat_point[i]
        flat_point[i] = original + eps
        upper = float(f(point))
        flat_point[i] = original - eps
        lower = float(f(point))
        flat_point[i] = original
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise DomainError(f"f is not finite near element {i}")
        flat_grad[i] = (upper - lower) / (2.0 * eps)
    return grad


def compare_gradients(
    analytic: np.ndarray, numeric: np.ndarray
) -> GradCheckReport:
    """Summarize how far two gradient estimates are apart, per element."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    if not diff.size:
        return GradCheckReport(0.0, 0.0, 0)
    magnitude = np.maximum(np.abs(analytic), np.abs(numeric))
    floor = max(SMALL_GRADIENT_FLOOR * float(magnitude.max()), 1e-12)
    relative = diff / np.maximum(magnitude, floor)
    return GradCheckReport(
        max_abs_error=float(diff.max()),
        max_rel_error=float(relative.max()),
        num_elements=int(diff.size),
    )


def check_gradient(
    fn: Callable[[Tensor], Tensor],
    x: npt.ArrayLike,
    eps: float = DEFAULT_EPS,
) -> GradCheckReport:
    """Compare the tape gradient of ``sum(fn(x))`` with finite differences."""
    leaf = Parameter(np.asarray(x, dtype=np.float64), dtype=np.float64)
    fn(leaf).sum().backward()
    analytic = (
        leaf.grad if leaf.grad is not None else np.zeros(leaf.shape)
    )

    def scalar(values: np.ndarray) -> float:
        return fn(Tensor(values, dtype=np.float64)).sum().item()

    return compare_gradients(analytic, finite_diff_grad(scalar, x, eps))


def check_parameter_gradients(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Parameter],
    sample_fraction: float = 1.0,
    rng: np.random.Generator | None = None,
    eps: float = DEFAULT_EPS,
) -> GradCheckReport:
    """Check ``d loss / d params`` on a random subset of parameter entries.

    Parameters must already hold float64 values. Each sampled entry is
    nudged in place; the original values come back even when the loss
    fails under a nudge.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for param in params.values():
        param.zero_grad()
    loss_fn().backward()

    analytic: list[float] = []
    numeric: list[float] = []
    for param in params.values():
        count = param.size
        picks = max(1, int(round(sample_fraction * count)))
        chosen = np.sort(
            rng.choice(count, size=min(picks, count), replace=False)
        )
        grad = param.grad if param.grad is not None else np.zeros(param.shape)
        base = param.numpy()
        try:
            for flat in chosen:
                index = np.unravel_index(flat, param.shape)
                nudged = base.copy()
                nudged[index] += eps
                param.assign(nudged)
                upper = loss_fn().item()
                nudged[index] -= 2 * eps
                param.assign(nudged)
                lower = loss_fn().item()
                if not (np.isfinite(upper) and np.isfinite(lower)):
                    raise DomainError("loss is not finite under perturbation")
                numeric.append((upper - lower) / (2 * eps))
                analytic.append(float(grad[index]))
        finally:
            param.assign(base)
    return compare_gradients(np.array(analytic), np.array(numeric))
