"""SGD with momentum and the central-difference gradient checker."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Parameter, Tensor, backward, zero_grads


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient.

    ``v <- momentum * v + (grad + weight_decay * value)``; ``value <- value - lr * v``.
    """

    def __init__(self, params: Sequence[Parameter], lr: float, momentum: float = 0.9,
                 weight_decay: float = 1e-4):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad
            if self.weight_decay:
                v += self.weight_decay * p.data
            p.data -= self.lr * v

    def zero_grads(self) -> None:
        zero_grads(self.params)


def sgd_momentum_step(params: Sequence[Parameter], velocities: Sequence[np.ndarray], lr: float,
                      momentum: float = 0.9, weight_decay: float = 1e-4) -> None:
    """Functional form of :meth:`SGD.step` over caller-owned velocity buffers."""
    for p, v in zip(params, velocities):
        v *= momentum
        v += p.grad + weight_decay * p.data
        p.data -= lr * v


def grad_check(fn: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-3,
               max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Largest per-coordinate ``|a - n| / max(1, |a|, |n|)`` between backward and central differences.

    ``fn`` must rebuild the graph from the current parameter values on each call.
    ``max_coords`` limits the check to a random subset of coordinates per parameter.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError("eps must lie in (0, 1e-2]")
    zero_grads(params)
    loss = fn()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("non-finite function value")
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            fp = float(fn().data)
            flat[idx] = orig - eps
            fm = float(fn().data)
            flat[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("non-finite function value")
            num = (fp - fm) / (2.0 * eps)
            a = analytic.reshape(-1)[idx]
            worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
    zero_grads(params)
    return worst
