"""Parameter containers and layers."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .autograd import Tensor
from .deform import dcn_forward


class Module:
    """Minimal parameter container.

    Parameters are the ``requires_grad`` tensors held as attributes; child
    modules may sit in attributes or lists. Names follow attribute
    insertion order, so they are stable checkpoint keys.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield prefix + attr, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{attr}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{attr}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        unexpected = state.keys() - own.keys()
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (gradient checks run in float64)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1,
                 padding: int | None = None, dilation: int = 1, zero: bool = False):
        shape = (cout, cin, k, k)
        fan_in = cin * k * k
        if zero:
            w = np.zeros(shape, np.float32)
            b = np.zeros(cout, np.float32)
        else:
            w = _uniform(rng, shape, fan_in)
            b = _uniform(rng, (cout,), fan_in)
        self.weight = Tensor(w, requires_grad=True, dtype=np.float32)
        self.bias = Tensor(b, requires_grad=True, dtype=np.float32)
        self.stride = stride
        self.dilation = dilation
        self.padding = dilation * (k - 1) // 2 if padding is None else padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class DeformConv2d(Module):
    """Deformable convolution layer; offsets are supplied by the caller."""

    def __init__(self, cin: int, cout: int, k: int, deform_groups: int, rng: np.random.Generator):
        fan_in = cin * k * k
        self.weight = Tensor(_uniform(rng, (cout, cin, k, k), fan_in), requires_grad=True, dtype=np.float32)
        self.bias = Tensor(_uniform(rng, (cout,), fan_in), requires_grad=True, dtype=np.float32)
        self.deform_groups = deform_groups

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    def forward(self, x: Tensor, offsets: Tensor) -> Tensor:
        return dcn_forward(x, offsets, self.weight, self.bias, self.deform_groups)
