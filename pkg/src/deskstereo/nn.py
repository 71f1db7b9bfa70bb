"""Parameter containers and layers on top of the autograd tensors."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError


class Module:
    """Holds parameters and child modules as attributes, PyTorch style.

    Parameter names follow attribute paths (``"head.conv1.weight"``); lists of
    modules are indexed (``"levels.2.weight"``).
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        own = dict(self.named_parameters())
        missing = sorted(prefix + n for n in own if prefix + n not in state)
        if missing:
            raise ConfigError(f"checkpoint is missing keys: {', '.join(missing)}")
        for n, p in own.items():
            value = np.asarray(state[prefix + n])
            if value.shape != p.shape:
                raise ConfigError(f"checkpoint key {prefix + n} has shape {value.shape}, model expects {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def to(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(data: np.ndarray, trainable: bool) -> Tensor:
    return Tensor(data.astype(np.float32), requires_grad=trainable)


class Conv2d(Module):
    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        bias: bool = True,
        gain: float = 1.0,
        zero: bool = False,
        trainable: bool = True,
    ):
        fan_in = in_ch * kernel * kernel
        std = 0.0 if zero else gain * np.sqrt(2.0 / fan_in)
        self.weight = _param(rng.standard_normal((out_ch, in_ch, kernel, kernel)) * std, trainable)
        self.bias = _param(np.zeros(out_ch), trainable) if bias else None
        self._stride = stride
        self._padding = kernel // 2

    def forward(self, x: Tensor) -> Tensor:
        return ag.conv2d(x, self.weight, self.bias, stride=self._stride, padding=self._padding)


class Conv3d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator, gain: float = 1.0):
        fan_in = in_ch * kernel**3
        std = gain * np.sqrt(2.0 / fan_in)
        self.weight = _param(rng.standard_normal((out_ch, in_ch, kernel, kernel, kernel)) * std, True)
        self.bias = _param(np.zeros(out_ch), True)
        self._padding = kernel // 2

    def forward(self, x: Tensor) -> Tensor:
        return ag.conv3d(x, self.weight, self.bias, padding=self._padding)


class ConvBlock(Module):
    """3x3 convolution followed by ReLU."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, stride: int = 1):
        self.conv = Conv2d(in_ch, out_ch, 3, rng, stride=stride)

    def forward(self, x: Tensor) -> Tensor:
        return ag.relu(self.conv(x))


class ResBlock(Module):
    """Pre-activation residual unit: x + conv(relu(conv(relu(x))))."""

    def __init__(self, ch: int, rng: np.random.Generator):
        self.conv1 = Conv2d(ch, ch, 3, rng)
        self.conv2 = Conv2d(ch, ch, 3, rng, gain=0.5)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv2(ag.relu(self.conv1(ag.relu(x))))
