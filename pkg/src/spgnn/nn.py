"""Parameter containers and the layers built from :mod:`spgnn.core` primitives."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import core
from .core import Parameter, Tensor


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; identical seeds give identical streams on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, a: float = 1.0) -> np.ndarray:
    """Fan-in Kaiming-uniform with leaky slope ``a``.

    The default ``a = 1`` gives unit gain (bound ``sqrt(3 / fan_in)``), which keeps
    activations near unit scale through the unnormalised residual stack.
    """
    bound = np.sqrt(6.0 / ((1.0 + a * a) * fan_in))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grads(self) -> None:
        core.zero_grads(self.parameters())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(kaiming_uniform(rng, (d_in, d_out), d_in), "weight")
        self.bias = Parameter(np.zeros(d_out), "bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = core.matmul(x, self.weight)
        return y if self.bias is None else core.add(y, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, pad: int | None = None, bias: bool = True):
        self.stride = stride
        self.pad = (k - 1) // 2 if pad is None else pad
        self.weight = Parameter(kaiming_uniform(rng, (c_out, c_in, k, k), c_in * k * k), "weight")
        self.bias = Parameter(np.zeros(c_out), "bias") if bias else None

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        k = self.weight.shape[2]
        return (core.conv_out_size(h, k, self.stride, self.pad),
                core.conv_out_size(w, k, self.stride, self.pad))

    def __call__(self, x: Tensor) -> Tensor:
        return core.conv2d(x, self.weight, self.bias, self.stride, self.pad)
