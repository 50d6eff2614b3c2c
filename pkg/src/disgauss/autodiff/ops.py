"""Differentiable primitives over Tensor.

Broadcasting rule: numpy-style trailing-dimension alignment. Shapes align
from the right; each aligned dimension must match or be 1; missing leading
dimensions act as 1; scalars broadcast everywhere. Gradients are summed back
over broadcast axes.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, record

__all__ = [
    "add", "sub", "mul", "div", "neg", "matmul", "relu", "sigmoid", "tanh",
    "softplus", "exp", "log", "sqrt", "abs_", "pow_const", "clip", "where",
    "tsum", "tmean", "tmax_const_shift", "reshape", "transpose", "swapaxes",
    "broadcast_to", "concat", "stack", "getitem", "take", "scatter_mean",
    "grid_sample", "upsample_nearest", "conv2d", "conv_transpose2d",
    "batch_norm", "stop_gradient", "as_tensor", "const_like",
]


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def const_like(value, t: Tensor) -> Tensor:
    return Tensor(np.asarray(value, dtype=t.dtype))


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were expanded by broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ---------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)
    out = Tensor(a.data + b.data)
    return record("add", out, (a, b), lambda g: (
        unbroadcast(g, a.data.shape), unbroadcast(g, b.data.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)
    out = Tensor(a.data - b.data)
    return record("sub", out, (a, b), lambda g: (
        unbroadcast(g, a.data.shape), unbroadcast(-g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)
    out = Tensor(a.data * b.data)
    return record("mul", out, (a, b), lambda g: (
        unbroadcast(g * b.data, a.data.shape), unbroadcast(g * a.data, b.data.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a.data, b.data)
    out = Tensor(a.data / b.data)

    def back(g):
        ga = unbroadcast(g / b.data, a.data.shape)
        gb = unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return record("div", out, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)
    return record("neg", out, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims disagree, {a.shape} @ {b.shape}")
    _check_broadcast("matmul", a.data[..., :1, :1], b.data[..., :1, :1])
    out = Tensor(a.data @ b.data)

    def back(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return record("matmul", out, (a, b), back)


# -- nonlinearities -------------------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0))
    return record("relu", out, (a,), lambda g: (g * (a.data > 0),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s)
    return record("sigmoid", out, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    out = Tensor(t)
    return record("tanh", out, (a,), lambda g: (g * (1.0 - t * t),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.logaddexp(np.zeros((), dtype=a.dtype), a.data))

    def back(g):
        with np.errstate(over="ignore"):
            s = 1.0 / (1.0 + np.exp(-a.data))
        return (g * s,)

    return record("softplus", out, (a,), back)


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    out = Tensor(e)
    return record("exp", out, (a,), lambda g: (g * e,))


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data))
    return record("log", out, (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    s = np.sqrt(a.data)
    out = Tensor(s)
    return record("sqrt", out, (a,), lambda g: (g * 0.5 / s,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.abs(a.data))
    return record("abs", out, (a,), lambda g: (g * np.sign(a.data),))


def pow_const(a, p: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data ** p)
    return record("pow", out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def clip(a, lo: float | None, hi: float | None) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi))
    mask = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        mask &= a.data >= lo
    if hi is not None:
        mask &= a.data <= hi
    return record("clip", out, (a,), lambda g: (g * mask,))


def where(cond: np.ndarray, a, b) -> Tensor:
    """Elementwise select by a constant boolean mask (no gradient to cond)."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = Tensor(np.where(cond, a.data, b.data))

    def back(g):
        ga = unbroadcast(np.where(cond, g, 0), a.data.shape)
        gb = unbroadcast(np.where(cond, 0, g), b.data.shape)
        return ga, gb

    return record("where", out, (a, b), back)


# -- reductions -----------------------------------------------------------

def _reduce_grad(g, in_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, in_shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(a % len(in_shape) for a in axes)
        shape = [1 if i in axes else s for i, s in enumerate(in_shape)]
        g = g.reshape(shape)
    return np.broadcast_to(g, in_shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    return record("sum", out, (a,), lambda g: (
        _reduce_grad(g, a.data.shape, axis, keepdims).astype(a.dtype, copy=False),))


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    n = a.data.size / max(out.data.size, 1)
    return record("mean", out, (a,), lambda g: (
        (_reduce_grad(g, a.data.shape, axis, keepdims) / n).astype(a.dtype, copy=False),))


def tmax_const_shift(a, axis=-1) -> np.ndarray:
    """Detached max along an axis (keepdims), for log-sum-exp stabilization."""
    a = as_tensor(a)
    return a.data.max(axis=axis, keepdims=True)


# -- shape surgery ---------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    return record("reshape", out, (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes))
    return record("transpose", out, (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.swapaxes(a.data, ax1, ax2))
    return record("swapaxes", out, (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    _check_broadcast("broadcast_to", a.data, np.empty(shape, dtype=np.bool_))
    out = Tensor(np.broadcast_to(a.data, shape).copy())
    return record("broadcast_to", out, (a,), lambda g: (unbroadcast(g, a.data.shape),))


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return record("concat", out, tuple(tensors),
                  lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return record("stack", out, tuple(tensors), back)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data[index])

    def back(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, index, g)
        return (ga,)

    return record("slice", out, (a,), back)


def take(a, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Gather rows along an axis by a constant integer index array."""
    a = as_tensor(a)
    indices = np.asarray(indices)
    out = Tensor(np.take(a.data, indices, axis=axis))

    def back(g):
        ga = np.zeros_like(a.data)
        if axis == 0:
            np.add.at(ga, indices, g)
        else:
            ga_m = np.moveaxis(ga, axis, 0)
            np.add.at(ga_m, indices, np.moveaxis(g, axis, 0))
        return (ga,)

    return record("take", out, (a,), back)


def stop_gradient(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data)


# -- scatter / sample -------------------------------------------------------

def scatter_mean(values, indices: np.ndarray, size: int) -> Tensor:
    """Mean-scatter rows of ``values`` (R, C) into ``size`` cells by index.

    Empty cells stay zero. Gradient routes grad_cell / count back to each
    contributing row.
    """
    v = as_tensor(values)
    if v.ndim != 2:
        raise ShapeError(f"scatter_mean: values must be 2-d, got {v.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape != (v.shape[0],):
        raise ShapeError(
            f"scatter_mean: indices shape {idx.shape} does not match rows {v.shape[0]}")
    counts = np.bincount(idx, minlength=size).astype(v.dtype)
    acc = np.zeros((size, v.shape[1]), dtype=v.dtype)
    np.add.at(acc, idx, v.data)
    denom = np.maximum(counts, 1)[:, None]
    out = Tensor(acc / denom)

    def back(g):
        return ((g / denom)[idx],)

    return record("scatter_mean", out, (v,), back)


def grid_sample(feat, coords) -> Tensor:
    """Bilinear sample: feat (M, C, H, W), coords (M, N, 2) in index space.

    coords[..., 0] indexes width (x), coords[..., 1] height (y); integer
    coordinates hit cell centers exactly; samples are border-clamped.
    Returns (M, N, C). Differentiable in both feat and coords.
    """
    f = as_tensor(feat)
    c = as_tensor(coords)
    if f.ndim != 4 or c.ndim != 3 or c.shape[-1] != 2:
        raise ShapeError(f"grid_sample: feat {f.shape} with coords {c.shape}")
    if f.shape[0] != c.shape[0]:
        raise ShapeError(f"grid_sample: batch dims differ, {f.shape[0]} vs {c.shape[0]}")
    M, C, H, W = f.shape
    N = c.shape[1]
    x = np.clip(c.data[..., 0], 0.0, W - 1.0)
    y = np.clip(c.data[..., 1], 0.0, H - 1.0)
    x0 = np.floor(np.minimum(x, W - 2 if W > 1 else 0)).astype(np.int64) if W > 1 else np.zeros_like(x, dtype=np.int64)
    y0 = np.floor(np.minimum(y, H - 2 if H > 1 else 0)).astype(np.int64) if H > 1 else np.zeros_like(y, dtype=np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx = (x - x0).astype(f.dtype)
    wy = (y - y0).astype(f.dtype)
    b = np.arange(M)[:, None]
    f00 = f.data[b, :, y0, x0]
    f01 = f.data[b, :, y0, x1]
    f10 = f.data[b, :, y1, x0]
    f11 = f.data[b, :, y1, x1]
    wx_ = wx[..., None]
    wy_ = wy[..., None]
    out_data = (f00 * (1 - wx_) * (1 - wy_) + f01 * wx_ * (1 - wy_)
                + f10 * (1 - wx_) * wy_ + f11 * wx_ * wy_)
    out = Tensor(out_data)

    in_x = (c.data[..., 0] > 0.0) & (c.data[..., 0] < W - 1.0)
    in_y = (c.data[..., 1] > 0.0) & (c.data[..., 1] < H - 1.0)

    def back(g):
        gf = np.zeros_like(f.data)
        gm = np.moveaxis(gf, 1, -1)  # view (M, H, W, C)
        np.add.at(gm, (b, y0, x0), g * (1 - wx_) * (1 - wy_))
        np.add.at(gm, (b, y0, x1), g * wx_ * (1 - wy_))
        np.add.at(gm, (b, y1, x0), g * (1 - wx_) * wy_)
        np.add.at(gm, (b, y1, x1), g * wx_ * wy_)
        dx = ((f01 - f00) * (1 - wy_) + (f11 - f10) * wy_)
        dy = ((f10 - f00) * (1 - wx_) + (f11 - f01) * wx_)
        gx = (g * dx).sum(axis=-1) * in_x
        gy = (g * dy).sum(axis=-1) * in_y
        gc = np.stack([gx, gy], axis=-1).astype(c.dtype, copy=False)
        return gf, gc

    return record("grid_sample", out, (f, c), back)


def upsample_nearest(a, factor: int) -> Tensor:
    """Nearest-neighbor upsample of (B, C, H, W) by an integer factor."""
    a = as_tensor(a)
    if a.ndim != 4:
        raise ShapeError(f"upsample_nearest: expected 4-d input, got {a.shape}")
    B, C, H, W = a.shape
    out = Tensor(np.repeat(np.repeat(a.data, factor, axis=2), factor, axis=3))

    def back(g):
        g = g.reshape(B, C, H, factor, W, factor)
        return (g.sum(axis=(3, 5)),)

    return record("upsample_nearest", out, (a,), back)


# -- convolutions -----------------------------------------------------------

_CONV_CHUNK_ROWS = 1 << 18  # cap transient im2col memory


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    B, C, H, W = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    s = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (B, C, kh, kw, Ho, Wo),
        (s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride))
    col = np.ascontiguousarray(view.transpose(0, 4, 5, 1, 2, 3)).reshape(
        B * Ho * Wo, C * kh * kw)
    return col, Ho, Wo


def _col2im(col: np.ndarray, x_shape, kh, kw, stride, pad, Ho, Wo):
    B, C, H, W = x_shape
    x = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=col.dtype)
    col = col.reshape(B, Ho, Wo, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            x[:, :, i:i + Ho * stride:stride, j:j + Wo * stride:stride] += col[:, :, i, j]
    if pad:
        x = x[:, :, pad:-pad, pad:-pad]
    return x


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d convolution: x (B, Cin, H, W), w (Cout, Cin, kh, kw), b (Cout,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d operands, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: channel mismatch, input {x.shape} vs kernel {w.shape}")
    B, C, H, W = x.shape
    Co, _, kh, kw = w.shape
    if H + 2 * padding < kh or W + 2 * padding < kw:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    wmat = w.data.reshape(Co, -1)
    rows_per_img = Ho * Wo
    chunk = max(1, _CONV_CHUNK_ROWS // max(rows_per_img, 1))
    out_data = np.empty((B, Co, Ho, Wo), dtype=x.dtype)
    for s0 in range(0, B, chunk):
        s1 = min(s0 + chunk, B)
        col, _, _ = _im2col(x.data[s0:s1], kh, kw, stride, padding)
        y = col @ wmat.T
        out_data[s0:s1] = y.reshape(s1 - s0, Ho, Wo, Co).transpose(0, 3, 1, 2)
    if b is not None:
        b = as_tensor(b)
        out_data = out_data + b.data.reshape(1, Co, 1, 1)
    out = Tensor(out_data)

    def back(g):
        gw = np.zeros_like(w.data.reshape(Co, -1))
        gx = np.empty_like(x.data)
        for s0 in range(0, B, chunk):
            s1 = min(s0 + chunk, B)
            gcol = g[s0:s1].transpose(0, 2, 3, 1).reshape(-1, Co)
            col, _, _ = _im2col(x.data[s0:s1], kh, kw, stride, padding)
            gw += gcol.T @ col
            gx[s0:s1] = _col2im(gcol @ wmat, (s1 - s0, C, H, W), kh, kw,
                                stride, padding, Ho, Wo)
        grads = [gx, gw.reshape(w.data.shape)]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    inputs = (x, w) if b is None else (x, w, b)
    return record("conv2d", out, inputs, back)


def conv_transpose2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution: x (B, Cin, H, W), w (Cin, Cout, kh, kw).

    Output spatial size is (H-1)*stride + kh - 2*padding.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv_transpose2d: need 4-d operands, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"conv_transpose2d: channel mismatch, input {x.shape} vs kernel {w.shape}")
    B, Ci, H, W = x.shape
    _, Co, kh, kw = w.shape
    Ho = (H - 1) * stride + kh - 2 * padding
    Wo = (W - 1) * stride + kw - 2 * padding
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"conv_transpose2d: non-positive output size from {x.shape}")
    wmat = w.data.reshape(Ci, Co * kh * kw)
    col = x.data.transpose(0, 2, 3, 1).reshape(-1, Ci) @ wmat
    out_data = _col2im(col.reshape(B, H, W, Co, kh, kw).reshape(B * H * W, -1),
                       (B, Co, Ho, Wo), kh, kw, stride, padding, H, W)
    if b is not None:
        b = as_tensor(b)
        out_data = out_data + b.data.reshape(1, Co, 1, 1)
    out = Tensor(out_data)

    def back(g):
        gcol, _, _ = _im2col(g, kh, kw, stride, padding)  # (B*H*W, Co*kh*kw)
        gx = (gcol @ wmat.T).reshape(B, H, W, Ci).transpose(0, 3, 1, 2)
        gw = (x.data.transpose(0, 2, 3, 1).reshape(-1, Ci).T @ gcol).reshape(w.data.shape)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    inputs = (x, w) if b is None else (x, w, b)
    return record("conv_transpose2d", out, inputs, back)


# -- normalization -----------------------------------------------------------

def batch_norm(x, channel_axis: int, eps: float = 1e-5) -> Tensor:
    """Normalize over every axis except ``channel_axis`` (batch statistics).

    Composite of primitives, so gradients come for free. Running-average
    bookkeeping lives in nn.BatchNorm.
    """
    x = as_tensor(x)
    axes = tuple(i for i in range(x.ndim) if i != channel_axis % x.ndim)
    mu = tmean(x, axis=axes, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=axes, keepdims=True)
    return div(centered, sqrt(add(var, const_like(eps, x))))


# -- operator bindings --------------------------------------------------------

def _binds():
    Tensor.__add__ = lambda self, other: add(self, other)
    Tensor.__radd__ = lambda self, other: add(other, self)
    Tensor.__sub__ = lambda self, other: sub(self, other)
    Tensor.__rsub__ = lambda self, other: sub(other, self)
    Tensor.__mul__ = lambda self, other: mul(self, other)
    Tensor.__rmul__ = lambda self, other: mul(other, self)
    Tensor.__truediv__ = lambda self, other: div(self, other)
    Tensor.__rtruediv__ = lambda self, other: div(other, self)
    Tensor.__neg__ = lambda self: neg(self)
    Tensor.__matmul__ = lambda self, other: matmul(self, other)
    Tensor.__getitem__ = lambda self, index: getitem(self, index)
    Tensor.sum = lambda self, axis=None, keepdims=False: tsum(self, axis, keepdims)
    Tensor.mean = lambda self, axis=None, keepdims=False: tmean(self, axis, keepdims)
    Tensor.reshape = lambda self, *shape: reshape(
        self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)


_binds()
