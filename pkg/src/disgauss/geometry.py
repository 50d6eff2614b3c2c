"""Point-cloud initialization branch: style-injected folding of a 2D grid."""

from __future__ import annotations

import numpy as np

from .autodiff import BatchNorm, Linear, Module, Tensor, ops
from .autodiff.tensor import ShapeError


def make_grid(n: int) -> np.ndarray:
    """sqrt(n) x sqrt(n) uniform lattice over [0,1]^2, row-major (N, 2).

    The first coordinate varies slowest. n must be a perfect square.
    """
    m = int(round(np.sqrt(n)))
    if m * m != n:
        raise ValueError(f"grid size {n} is not a perfect square")
    u = np.linspace(0.0, 1.0, m, dtype=np.float32)
    uu, vv = np.meshgrid(u, u, indexing="ij")
    return np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1)


class StyleInject(Module):
    """h_out = gamma(c) * batchnorm(h_in) + beta(c).

    gamma is parameterized as 1 + learned offset so zero-initialized
    modulation weights give the identity at init; normalization runs over
    the batch/point axes per channel (eps 1e-5), with running averages in
    eval mode (momentum 0.1).
    """

    def __init__(self, channels: int, cond_dim: int, rng: np.random.Generator,
                 channel_axis: int = -1, dtype=np.float32, w_scale: float = 0.05):
        super().__init__()
        self.channels = channels
        self.channel_axis = channel_axis
        self.norm = BatchNorm(channels, channel_axis=channel_axis, dtype=dtype)
        self.head = Linear(cond_dim, 2 * channels, rng, dtype=dtype, w_scale=w_scale)

    def __call__(self, h: Tensor, cond: Tensor) -> Tensor:
        ax = self.channel_axis % h.ndim
        if h.shape[ax] != self.channels:
            raise ShapeError(
                f"style_inject: feature channels {h.shape[ax]} != head channels {self.channels}")
        if cond.shape[0] != h.shape[0]:
            raise ShapeError(
                f"style_inject: batch mismatch, cond {cond.shape} vs features {h.shape}")
        mod = self.head(cond)  # (B, 2C)
        gamma = ops.add(mod[:, :self.channels], ops.const_like(1.0, mod))
        beta = mod[:, self.channels:]
        bshape = tuple(h.shape[0] if i == 0 else (-1 if i == ax else 1)
                       for i in range(h.ndim))
        normed = self.norm(h)
        return ops.add(ops.mul(ops.reshape(gamma, bshape), normed),
                       ops.reshape(beta, bshape))


class _FoldStage(Module):
    """Per-point 3-layer shared MLP with style injection after each hidden."""

    def __init__(self, in_dim: int, hidden: int, cond_dim: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(in_dim, hidden, rng, dtype=dtype)
        self.si1 = StyleInject(hidden, cond_dim, rng, dtype=dtype)
        self.fc2 = Linear(hidden, hidden, rng, dtype=dtype)
        self.si2 = StyleInject(hidden, cond_dim, rng, dtype=dtype)
        self.fc3 = Linear(hidden, 3, rng, dtype=dtype)

    def __call__(self, x: Tensor, cond: Tensor) -> Tensor:
        h = ops.relu(self.si1(self.fc1(x), cond))
        h = ops.relu(self.si2(self.fc2(h), cond))
        return self.fc3(h)


class FoldingDecoder(Module):
    """Two folding stages deform grid seeds into a point cloud.

    Stage 1 maps (seed || broadcast condition) -> intermediate 3D; stage 2
    maps (intermediate || seed) -> final 3D. Deterministic given
    (seeds, condition, parameters).
    """

    def __init__(self, cond_dim: int, rng: np.random.Generator,
                 n_points: int = 1024, hidden: int = 128, dtype=np.float32):
        super().__init__()
        self.cond_dim = cond_dim
        self.n_points = n_points
        self.seeds = make_grid(n_points).astype(dtype)
        self.stage1 = _FoldStage(2 + cond_dim, hidden, cond_dim, rng, dtype)
        self.stage2 = _FoldStage(3 + 2, hidden, cond_dim, rng, dtype)

    def __call__(self, cond: Tensor, seeds: np.ndarray | None = None) -> Tensor:
        """cond (B, cond_dim) -> points (B, N, 3)."""
        if cond.shape[-1] != self.cond_dim:
            raise ShapeError(
                f"fold: condition dim {cond.shape[-1]} != {self.cond_dim}")
        s = self.seeds if seeds is None else np.asarray(seeds, dtype=cond.dtype)
        n = len(s)
        B = cond.shape[0]
        seed_t = ops.broadcast_to(Tensor(s.astype(cond.dtype)).reshape(1, n, 2), (B, n, 2))
        cond_b = ops.broadcast_to(ops.reshape(cond, (B, 1, self.cond_dim)),
                                  (B, n, self.cond_dim))
        mid = self.stage1(ops.concat([seed_t, cond_b], axis=-1), cond)
        out = self.stage2(ops.concat([mid, seed_t], axis=-1), cond)
        return out
