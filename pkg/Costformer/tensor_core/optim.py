"""Adaptive-moment gradient descent over :class:`Parameter` leaves."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from Costformer.tensor_core.tensor import Parameter


class Adam:
    """Adam with bias correction; parameters without a gradient are skipped."""

    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        """Bind the optimizer to a fixed, ordered list of parameters."""
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self._first = [np.zeros_like(p.data) for p in self.params]
        self._second = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        """Clear every parameter gradient."""
        for param in self.params:
            param.zero_grad()

    def step(self) -> None:
        """Apply one update using the accumulated gradients."""
        self.step_count += 1
        beta1, beta2 = self.betas
        correction1 = 1.0 - beta1**self.step_count
        correction2 = 1.0 - beta2**self.step_count
        for param, first, second in zip(
            self.params, self._first, self._second, strict=True
        ):
            if param.grad is None:
                continue
            grad = param.grad.astype(param.dtype)
            first *= beta1
            first += (1.0 - beta1) * grad
            second *= beta2
            second += (1.0 - beta2) * grad * grad
            update = (first / correction1) / (
                np.sqrt(second / correction2) + self.eps
            )
            param.assign(param.data - self.lr * update)
