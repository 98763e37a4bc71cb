"""Parameter containers and the basic layers the network is built from."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor


class Parameter(Tensor):
    """A tensor that is a tracked leaf by construction."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) truncated at two standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2
    return (out * std).astype(dtype)


def fan_in_std(fan_in: int) -> float:
    """Std of the uniform(+-1/sqrt(fan_in)) init that convolution layers conventionally start from."""
    return 1.0 / math.sqrt(3.0 * fan_in)


class Module:
    """Base class. Parameters and sub-modules are discovered from attributes
    in assignment order, which makes parameter names stable."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen: set[int] = set()
        for name, value in self._iter_named(prefix):
            if id(value) not in seen:
                seen.add(id(value))
                yield name, value

    def _iter_named(self, prefix: str):
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value._iter_named(full + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data) for n, p in self.named_parameters())

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            unexpected = sorted(set(state) - set(params))
            if missing or unexpected:
                raise KeyError(f"state mismatch; missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, arr in state.items():
            if name not in params:
                continue
            p = params[name]
            if p.shape != arr.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match parameter {p.shape}")
            p.data = np.array(arr, dtype=p.dtype)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


class Linear(Module):
    """Channel-last affine layer; weight stored (in, out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 std: float = 0.02, dtype=np.float32):
        self.weight = Parameter(trunc_normal(rng, (d_in, d_out), std, dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 padding: int | None = None, bias: bool = True, std: float | None = None, dtype=np.float32):
        self.stride = stride
        self.padding = (kernel - 1) // 2 if padding is None else padding
        std = fan_in_std(c_in * kernel * kernel) if std is None else std
        self.weight = Parameter(trunc_normal(rng, (c_out, c_in, kernel, kernel), std, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 bias: bool = True, std: float | None = None, dtype=np.float32):
        self.stride = stride
        # each output pixel sees c_in * ceil(kernel / stride)^2 inputs
        std = fan_in_std(c_in * (-(-kernel // stride)) ** 2) if std is None else std
        self.weight = Parameter(trunc_normal(rng, (c_in, c_out, kernel, kernel), std, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d_transpose(x, self.weight, self.bias, stride=self.stride)


class DepthwiseConv2d(Module):
    def __init__(self, channels: int, kernel: int, rng: np.random.Generator, bias: bool = True,
                 std: float | None = None, dtype=np.float32):
        std = fan_in_std(kernel * kernel) if std is None else std
        self.weight = Parameter(trunc_normal(rng, (channels, 1, kernel, kernel), std, dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.depthwise_conv2d(x, self.weight, self.bias)


class LayerNorm(Module):
    """Layer norm over one axis (``axis=1`` normalises channels of an NCHW map)."""

    def __init__(self, features: int, axis: int = -1, eps: float = 1e-5, dtype=np.float32):
        self.axis = axis
        self.eps = eps
        self.weight = Parameter(np.ones(features, dtype=dtype))
        self.bias = Parameter(np.zeros(features, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.axis, self.eps, self.weight, self.bias)


class ConvNormAct(Module):
    """conv -> channel layer norm -> SiLU."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 dtype=np.float32):
        self.conv = Conv2d(c_in, c_out, kernel, rng, stride=stride, dtype=dtype)
        self.norm = LayerNorm(c_out, axis=1, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.silu(self.norm(self.conv(x)))
