"""Parameter containers and the basic layers used by the network."""
import math

import numpy as np

from . import ops
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=None):
        # own the storage: optimisers update parameters in place, which must
        # never write through to the caller's array
        super().__init__(np.array(data, copy=True), requires_grad=True, name=name)


class Module:
    """Base class; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_fan_in(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, din, dout, rng, bias=True):
        self.weight = Parameter(uniform_fan_in(rng, (din, dout), din))
        self.bias = Parameter(uniform_fan_in(rng, (dout,), din)) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, bias=True):
        fan_in = cin * k * k
        self.stride = (stride, stride)
        self.weight = Parameter(uniform_fan_in(rng, (k, k, cin, cout), fan_in))
        self.bias = Parameter(uniform_fan_in(rng, (cout,), fan_in)) if bias else None

    def forward(self, x):
        out = ops.conv2d(x, self.weight, self.stride, zero_pad=True)
        return out + self.bias if self.bias is not None else out


class Conv3d(Module):
    """Depth-only 3-D convolution: kernel (kd, 1, 1, cin, cout), depth-preserving."""

    def __init__(self, cin, cout, kd, rng, bias=True):
        fan_in = cin * kd
        self.weight = Parameter(uniform_fan_in(rng, (kd, 1, 1, cin, cout), fan_in))
        self.bias = Parameter(uniform_fan_in(rng, (cout,), fan_in)) if bias else None

    def forward(self, x):
        out = ops.conv3d(x, self.weight, zero_pad=True)
        return out + self.bias if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, dim):
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x):
        return ops.layer_norm(x, self.weight, self.bias)


def zero_(module):
    """Set every parameter of ``module`` to zero in place."""
    for p in module.parameters():
        p.data[...] = 0
    return module
