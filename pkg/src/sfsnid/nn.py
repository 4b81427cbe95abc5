"""Parameter containers used by the network blocks."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Base class: parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"parameter '{name}': expected shape {p.shape}, got {value.shape}")
            p.data[...] = value

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def zero_(self) -> "Module":
        """Set every parameter to zero (used for residual fixed-point checks)."""
        for p in self.parameters():
            p.data[...] = 0.0
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_param(shape: tuple[int, ...], bound: float, rng: np.random.Generator) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Conv2d(Module):
    """k x k convolution, 'same' zero padding, stride 1 or 2."""

    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator, stride: int = 1):
        if kernel not in (1, 3):
            raise ValueError(f"kernel must be 1 or 3, got {kernel}")
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        self.stride = stride
        bound = np.sqrt(1.0 / (cin * kernel * kernel))
        self.weight = uniform_param((cout, cin, kernel, kernel), bound, rng)
        self.bias = uniform_param((cout,), bound, rng)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride)


class LayerNorm(Module):
    """Channel-wise layer norm per spatial token with affine scale/shift."""

    def __init__(self, channels: int, eps: float = 1e-5):
        self.eps = eps
        self.weight = Tensor(np.ones(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.weight, self.bias, eps=self.eps)


def count_params(params) -> int:
    """Number of scalar parameters in a module, a mapping, or an iterable of tensors."""
    if isinstance(params, Module):
        params = params.parameters()
    elif isinstance(params, dict):
        params = params.values()
    return int(sum(np.prod(p.shape, dtype=np.int64) for p in params))
