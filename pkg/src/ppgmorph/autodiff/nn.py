"""Module containers with named parameters and buffers."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import DEFAULT_DTYPE, Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, dtype=None, name=None):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)


class Module:
    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, value in getattr(self, "_buffers", {}).items():
            yield prefix + name, value
        for name, child in self.children():
            yield from child.named_buffers(prefix + name + ".")

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def to_dtype(self, dtype):
        """Cast parameters in place; running-stat buffers stay float64."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self) -> dict:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"missing entries in state: {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.astype(p.dtype).copy()
        for name, b in buffers.items():
            b[...] = np.asarray(state[name])


def _init_uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, padding="same", bias=True, rng=None, dtype=DEFAULT_DTYPE):
        super().__init__()
        rng = np.random.default_rng(rng)
        fan_in = c_in * kernel
        # He-uniform for ReLU stacks
        self.weight = Parameter(_init_uniform(rng, (c_out, c_in, kernel), fan_in / 6.0, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype)) if bias else None
        self.stride, self.kernel, self.padding = stride, kernel, padding

    def forward(self, x):
        pad = F.same_padding(x.shape[2], self.kernel, self.stride) if self.padding == "same" else self.padding
        return F.conv1d(x, self.weight, self.bias, self.stride, pad)


class Linear(Module):
    def __init__(self, d_in, d_out, bias=True, rng=None, dtype=DEFAULT_DTYPE):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.weight = Parameter(_init_uniform(rng, (d_out, d_in), d_in, dtype))
        self.bias = Parameter(_init_uniform(rng, (d_out,), d_in, dtype)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class BatchNorm1d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.gamma = Parameter(np.ones(channels, dtype))
        self.beta = Parameter(np.zeros(channels, dtype))
        self._buffers = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}
        self.momentum, self.eps = momentum, eps

    def forward(self, x):
        return F.batch_norm(x, self.gamma, self.beta, self._buffers["running_mean"],
                            self._buffers["running_var"], self.training, self.momentum, self.eps)


class ReLU(Module):
    def forward(self, x):
        return x.relu()


class Dropout(Module):
    def __init__(self, p=0.5, rng=None):
        super().__init__()
        self.p = p
        self.rng = np.random.default_rng(rng)

    def forward(self, x):
        return F.dropout(x, self.p, self.training, self.rng)


class MaxPool1d(Module):
    def __init__(self, kernel=3, stride=1):
        super().__init__()
        self.kernel, self.stride = kernel, stride

    def forward(self, x):
        pad = F.same_padding(x.shape[2], self.kernel, self.stride)
        return F.max_pool1d(x, self.kernel, self.stride, pad)


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x
