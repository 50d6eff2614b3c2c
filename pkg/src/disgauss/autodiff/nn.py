"""Small module system: parameter registry, layers, initialization."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import DEFAULT_DTYPE, ShapeError, Tensor


class Module:
    """Composable parameter container with dotted-name registry.

    Tensor attributes register as parameters, Module attributes as children.
    Buffers (running statistics) are Tensors with requires_grad=False
    registered via ``register_buffer``; they travel with checkpoints but are
    excluded from the optimizer census.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and name not in self._buffers:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: Tensor):
        value.requires_grad = False
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self._params.items()}
        for name, child in self._children.items():
            out.update(child.parameters(prefix + name + "."))
        return out

    def buffers(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self._buffers.items()}
        for name, child in self._children.items():
            out.update(child.buffers(prefix + name + "."))
        return out

    def state(self) -> dict[str, Tensor]:
        s = self.parameters()
        s.update({"buf." + k: v for k, v in self.buffers().items()})
        return s

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None


def he_init(rng: np.random.Generator, shape, fan_in: int, dtype=DEFAULT_DTYPE) -> Tensor:
    w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    return Tensor(w.astype(dtype), requires_grad=True)


def zeros_param(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=DEFAULT_DTYPE, w_scale: float | None = None):
        super().__init__()
        if w_scale is None:
            self.w = he_init(rng, (in_dim, out_dim), in_dim, dtype)
        else:
            self.w = Tensor((rng.standard_normal((in_dim, out_dim)) * w_scale
                             ).astype(dtype), requires_grad=True)
        self.b = zeros_param((out_dim,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.w.shape[0]:
            raise ShapeError(f"linear: input {x.shape} vs weight {self.w.shape}")
        lead = x.shape[:-1]
        flat = ops.reshape(x, (-1, x.shape[-1]))
        y = ops.add(ops.matmul(flat, self.w), self.b)
        return ops.reshape(y, lead + (self.w.shape[1],))


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        fan_in = in_ch * kernel * kernel
        self.w = he_init(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype)
        self.b = zeros_param((out_ch,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class BatchNorm(Module):
    """Feature normalization over all non-channel axes, no affine part.

    Batch statistics while training; running averages (momentum 0.1) in eval.
    """

    def __init__(self, channels: int, channel_axis: int = -1, momentum: float = 0.1,
                 eps: float = 1e-5, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.channel_axis = channel_axis
        self.momentum = momentum
        self.eps = eps
        self.register_buffer("running_mean", Tensor(np.zeros(channels, dtype=dtype)))
        self.register_buffer("running_var", Tensor(np.ones(channels, dtype=dtype)))

    def __call__(self, x: Tensor) -> Tensor:
        ax = self.channel_axis % x.ndim
        if x.shape[ax] != self.running_mean.shape[0]:
            raise ShapeError(
                f"batch_norm: channel axis {ax} of {x.shape} does not match "
                f"{self.running_mean.shape[0]} channels")
        stat_axes = tuple(i for i in range(x.ndim) if i != ax)
        bshape = tuple(-1 if i == ax else 1 for i in range(x.ndim))
        if self.training:
            mu = x.data.mean(axis=stat_axes)
            var = x.data.var(axis=stat_axes)
            m = self.momentum
            self.running_mean.data = ((1 - m) * self.running_mean.data
                                      + m * mu).astype(x.dtype, copy=False)
            self.running_var.data = ((1 - m) * self.running_var.data
                                     + m * var).astype(x.dtype, copy=False)
            return ops.batch_norm(x, channel_axis=ax, eps=self.eps)
        mu = ops.reshape(self.running_mean, bshape)
        var = ops.reshape(self.running_var, bshape)
        inv = ops.div(ops.sub(x, mu), ops.sqrt(ops.add(var, ops.const_like(self.eps, x))))
        return inv


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        for i, layer in enumerate(layers):
            setattr(self, f"layer{i}", layer)
        self._layers = list(layers)

    def __call__(self, x):
        for layer in self._layers:
            x = layer(x)
        return x
