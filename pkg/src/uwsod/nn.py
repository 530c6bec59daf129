"""Parameter containers and the standard layer vocabulary.

Modules register Parameters, buffers (non-trainable state such as running
statistics), and child modules in attribute-assignment order, which fixes a
deterministic traversal order for the optimizer, EMA, and checkpoints.
"""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .errors import ValidationError
from .tensor import Tensor, default_dtype


class Parameter(Tensor):
    """A trainable tensor; always created with gradient tracking on."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, array: np.ndarray) -> None:
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    # -- traversal -----------------------------------------------------------

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def named_state(self):
        """All persistent arrays, parameters first then buffers, by name."""
        for name, p in self.named_parameters():
            yield name, p.data
        for name, b in self.named_buffers():
            yield name, b

    def modules(self):
        yield self
        for m in self._modules.values():
            yield from m.modules()

    # -- mode and gradient housekeeping --------------------------------------

    def train(self, mode: bool = True):
        for m in self.modules():
            object.__setattr__(m, "training", bool(mode))
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        """Copy values into parameters and buffers in place, by exact name."""
        state = dict(self.named_state())
        missing = sorted(set(state) - set(arrays))
        extra = sorted(set(arrays) - set(state))
        if missing or extra:
            raise ValidationError(
                f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, dst in state.items():
            src = arrays[name]
            if src.shape != dst.shape:
                raise ValidationError(
                    f"shape mismatch for {name}: {src.shape} vs {dst.shape}")
            np.copyto(dst, src.astype(dst.dtype, copy=False))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        if not isinstance(module, Module):
            raise ValidationError("ModuleList holds Modules only")
        self._modules[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Sequential(Module):
    def __init__(self, *modules):
        super().__init__()
        self._items = list(modules)
        for i, m in enumerate(self._items):
            self._modules[str(i)] = m

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def forward(self, x):
        for m in self._items:
            x = m(x)
        return x


# ---------------------------------------------------------------------------
# layers


class Conv2d(Module):
    """Same-size grouped convolution with Kaiming fan-in weight init."""

    def __init__(self, in_ch: int, out_ch: int, kernel, *, rng,
                 stride=1, groups: int = 1, bias: bool = True,
                 pad_mode: str = "zeros"):
        super().__init__()
        if isinstance(kernel, int):
            kernel = (kernel, kernel)
        kh, kw = int(kernel[0]), int(kernel[1])
        fan_in = (in_ch // groups) * kh * kw
        std = math.sqrt(2.0 / fan_in)
        self.weight = Parameter(
            rng.normal(0.0, std, size=(out_ch, in_ch // groups, kh, kw)),
            dtype=default_dtype())
        self.bias = Parameter(np.zeros(out_ch), dtype=default_dtype()) if bias else None
        self.stride = stride
        self.groups = groups
        self.pad_mode = pad_mode

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride,
                          groups=self.groups, pad_mode=self.pad_mode)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(channels), dtype=default_dtype())
        self.beta = Parameter(np.zeros(channels), dtype=default_dtype())
        self.register_buffer("running_mean",
                             np.zeros(channels, dtype=default_dtype()))
        self.register_buffer("running_var",
                             np.ones(channels, dtype=default_dtype()))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return ops.batch_norm2d(x, self.gamma, self.beta, self.running_mean,
                                self.running_var, self.training,
                                momentum=self.momentum, eps=self.eps)


def norm_group_count(channels: int) -> int:
    """8 groups once there are at least 8 evenly divisible channels, else 1."""
    return 8 if channels >= 8 and channels % 8 == 0 else 1


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int | None = None, eps: float = 1e-5):
        super().__init__()
        self.groups = norm_group_count(channels) if groups is None else groups
        if channels % self.groups:
            raise ValidationError(f"groups={self.groups} must divide C={channels}")
        self.gamma = Parameter(np.ones(channels), dtype=default_dtype())
        self.beta = Parameter(np.zeros(channels), dtype=default_dtype())
        self.eps = eps

    def forward(self, x):
        return ops.group_norm2d(x, self.gamma, self.beta, self.groups, eps=self.eps)


class ReLU(Module):
    def forward(self, x):
        return x.relu()


class ConvBlock(Module):
    """conv + optional norm + optional ReLU; bias dropped when a norm follows."""

    def __init__(self, in_ch: int, out_ch: int, kernel, *, rng,
                 norm: str = "none", act: bool = True, stride=1,
                 groups: int = 1, pad_mode: str = "zeros"):
        super().__init__()
        if norm not in ("none", "batch", "group"):
            raise ValidationError(f"unknown norm kind {norm!r}")
        self.conv = Conv2d(in_ch, out_ch, kernel, rng=rng, stride=stride,
                           groups=groups, bias=(norm == "none"),
                           pad_mode=pad_mode)
        self.norm = (BatchNorm2d(out_ch) if norm == "batch"
                     else GroupNorm(out_ch) if norm == "group" else None)
        self.act = act

    def forward(self, x):
        x = self.conv(x)
        if self.norm is not None:
            x = self.norm(x)
        return x.relu() if self.act else x
