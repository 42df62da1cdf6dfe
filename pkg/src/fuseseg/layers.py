"""Parameter-holding building blocks: a small module system over the tensor core.

Weight initialization is Kaiming-style fan-in scaling for convolution
kernels, zeros for biases, ones/zeros for batchnorm gamma/beta.  Every
layer draws from the generator it is handed at construction time, so a
model built from a seeded stream is reproducible.
"""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import ShapeError, Tensor


class Module:
    """Base class tracking parameters, buffers and train/eval mode."""

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, ModuleList):
                yield from value._named(name)

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        buffers = getattr(self, "_buffers", None)
        if buffers:
            for name, value in buffers.items():
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        """Strict load: every entry must exist with a matching shape."""
        own = {name: p for name, p in self.named_parameters()}
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        unexpected = set(state) - (set(own) | set(bufs))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, "
                           f"unexpected {sorted(unexpected)}")
        for name, value in state.items():
            target = own[name].data if name in own else bufs[name]
            if target.shape != value.shape:
                raise ShapeError(f"state entry {name!r}: shape {value.shape} "
                                 f"does not match {target.shape}")
            target[...] = value


class ModuleList:
    """Ordered container whose entries register as child modules (may nest)."""

    def __init__(self, modules=()):
        self._items = list(modules)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)

    def append(self, module):
        self._items.append(module)

    def _named(self, prefix):
        for i, item in enumerate(self._items):
            if isinstance(item, ModuleList):
                yield from item._named(f"{prefix}.{i}")
            else:
                yield f"{prefix}.{i}", item


def kaiming_conv_weight(rng, shape, dtype):
    """Fan-in scaled normal init; fan-in is Cin*Kh*Kw of the forward op."""
    fan_in = shape[1] * shape[2] * shape[3]
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel, rng, dtype,
                 stride=1, dilation=1, padding=0, bias=True):
        super().__init__()
        self.stride = stride
        self.dilation = dilation
        self.padding = padding
        self.weight = Tensor(
            kaiming_conv_weight(rng, (out_channels, in_channels, kernel, kernel), dtype),
            requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias,
                        stride=self.stride, dilation=self.dilation, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(self, in_channels, out_channels, kernel, rng, dtype,
                 stride=1, padding=0):
        super().__init__()
        self.stride = stride
        self.padding = padding
        # fan-in of the transposed op is Cin*Kh*Kw with Cin on axis 0
        fan_in = in_channels * kernel * kernel
        std = np.sqrt(2.0 / fan_in)
        self.weight = Tensor(
            (rng.standard_normal((in_channels, out_channels, kernel, kernel)) * std).astype(dtype),
            requires_grad=True)

    def forward(self, x):
        return F.conv_transpose2d(x, self.weight, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels, dtype, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self._buffers = {
            "running_mean": np.zeros(channels, dtype=dtype),
            "running_var": np.ones(channels, dtype=dtype),
        }

    def forward(self, x):
        return F.batchnorm2d(x, self.gamma, self.beta,
                             self._buffers["running_mean"], self._buffers["running_var"],
                             training=self.training, momentum=self.momentum, eps=self.eps)


class ConvBnRelu(Module):
    """conv -> batchnorm -> relu, the default block of both streams."""

    def __init__(self, in_channels, out_channels, kernel, rng, dtype,
                 stride=1, dilation=1, padding=0):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel, rng, dtype,
                           stride=stride, dilation=dilation, padding=padding, bias=False)
        self.bn = BatchNorm2d(out_channels, dtype)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))
