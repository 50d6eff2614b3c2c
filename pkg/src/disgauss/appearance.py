"""Triplane-Gaussian generation branch.

Local PointNet features, axial scatter-mean projection onto three feature
planes, style-conditioned U-Net refinement, bilinear point sampling, and a
shallow decoder emitting per-point Gaussian attributes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Conv2d, Linear, Module, Tensor, ops
from .autodiff.tensor import ShapeError
from .geometry import StyleInject

PLANE_AXES = ((0, 1), (0, 2), (1, 2))  # XY, XZ, YZ: coordinate pairs kept


@dataclass
class Triplane:
    """Three axis-aligned feature grids stacked as a (B, 3, C, Np, Np) Tensor."""

    planes: Tensor

    @property
    def resolution(self) -> int:
        return self.planes.shape[-1]

    @property
    def channels(self) -> int:
        return self.planes.shape[2]


@dataclass
class GaussianAttributes:
    """Decoded per-point Gaussian parameters, batched (B, N, ...)."""

    positions: Tensor        # (B, N, 3) base + bounded offset
    rotations: Tensor        # (B, N, 4) unit quaternions
    scales: Tensor           # (B, N, 3) in (0, s_max]
    sh_coeffs: Tensor        # (B, N, Bsh, 3)
    opacities: Tensor        # (B, N) in (0, 1)
    offsets: Tensor          # (B, N, 3) the raw bounded offsets


def _cell_index(coords: np.ndarray, res: int) -> np.ndarray:
    """Map [-1,1] coordinates to integer cell indices in [0, res)."""
    return np.clip(((coords + 1.0) * 0.5 * res).astype(np.int64), 0, res - 1)


def _sample_coords(coords: np.ndarray, res: int) -> np.ndarray:
    """Map [-1,1] coordinates to continuous index space (cell centers at ints)."""
    return (coords + 1.0) * 0.5 * res - 0.5


class LocalPointNet(Module):
    """Shared per-point MLP followed by plane-grid local mean pooling.

    Each point's feature is concatenated with the mean feature of the cell it
    occupies (averaged over the three planes) and re-projected back to the
    feature width.
    """

    def __init__(self, rng: np.random.Generator, feat_dim: int = 32,
                 hidden: int = 64, grid_res: int = 64, dtype=np.float32):
        super().__init__()
        self.feat_dim = feat_dim
        self.grid_res = grid_res
        self.fc1 = Linear(3, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, feat_dim, rng, dtype=dtype)
        self.proj = Linear(2 * feat_dim, feat_dim, rng, dtype=dtype)

    def __call__(self, points: Tensor) -> Tensor:
        """points (B, N, 3) in [-1,1]^3 (clamped otherwise) -> (B, N, C_f)."""
        if points.ndim != 3 or points.shape[-1] != 3 or points.shape[1] == 0:
            raise ShapeError(f"local_pointnet: need non-empty (B, N, 3), got {points.shape}")
        B, N, _ = points.shape
        res = self.grid_res
        pts = ops.clip(points, -1.0, 1.0)
        own = self.fc2(ops.relu(self.fc1(pts)))
        flat = ops.reshape(own, (B * N, self.feat_dim))
        p = pts.data
        pooled = None
        for ax in PLANE_AXES:
            ij = _cell_index(p[..., ax[0]], res) * res + _cell_index(p[..., ax[1]], res)
            idx = (ij + np.arange(B)[:, None] * res * res).reshape(-1)
            cells = ops.scatter_mean(flat, idx, B * res * res)
            gathered = ops.take(cells, idx)
            pooled = gathered if pooled is None else ops.add(pooled, gathered)
        pooled = ops.div(pooled, ops.const_like(3.0, pooled))
        merged = ops.concat([flat, pooled], axis=-1)
        return ops.reshape(self.proj(merged), (B, N, self.feat_dim))


def project_to_triplane(features: Tensor, points: Tensor, res: int) -> Triplane:
    """Scatter-mean per-point features into each plane's cells (T_init).

    Points map from [-1,1]^3 to cells by dropping the orthogonal coordinate;
    empty cells stay zero. features (B, N, C), points (B, N, 3).
    """
    if features.shape[:2] != points.shape[:2]:
        raise ShapeError(
            f"project_to_triplane: features {features.shape} vs points {points.shape}")
    B, N, C = features.shape
    flat = ops.reshape(features, (B * N, C))
    p = np.clip(points.data, -1.0, 1.0)
    planes = []
    for ax in PLANE_AXES:
        # first coordinate -> row (y index), second -> column (x index)
        rows = _cell_index(p[..., ax[0]], res)
        cols = _cell_index(p[..., ax[1]], res)
        idx = (rows * res + cols + np.arange(B)[:, None] * res * res).reshape(-1)
        cells = ops.scatter_mean(flat, idx, B * res * res)
        planes.append(ops.reshape(cells, (B, 1, res, res, C)))
    stacked = ops.concat(planes, axis=1)  # (B, 3, Np, Np, C)
    return Triplane(planes=ops.transpose(stacked, (0, 1, 4, 2, 3)))


def interp_triplane(tri: Triplane, points: Tensor) -> Tensor:
    """Bilinear-sample each plane at the projected points; concat XY||XZ||YZ.

    points (B, N, 3) in [-1,1]^3 (border-clamped). Returns (B, N, 3*Cp).
    """
    B, _, C, res, _ = tri.planes.shape
    N = points.shape[1]
    feats = []
    p = points
    for k, ax in enumerate(PLANE_AXES):
        plane = ops.reshape(tri.planes[:, k], (B, C, res, res))
        # row coordinate = first axis, col = second; grid_sample wants (x=col, y=row)
        rows = ops.mul(ops.add(p[..., ax[0]], ops.const_like(1.0, p)),
                       ops.const_like(0.5 * res, p))
        cols = ops.mul(ops.add(p[..., ax[1]], ops.const_like(1.0, p)),
                       ops.const_like(0.5 * res, p))
        half = ops.const_like(0.5, p)
        coords = ops.stack([ops.sub(cols, half), ops.sub(rows, half)], axis=-1)
        feats.append(ops.grid_sample(plane, coords))
    return ops.concat(feats, axis=-1)


class StyleConv(Module):
    """Convolution followed by style injection of the condition."""

    def __init__(self, in_ch: int, out_ch: int, cond_dim: int,
                 rng: np.random.Generator, kernel: int = 3, stride: int = 1,
                 dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, kernel, rng, stride=stride, dtype=dtype)
        self.si = StyleInject(out_ch, cond_dim, rng, channel_axis=1, dtype=dtype)

    def __call__(self, x: Tensor, cond: Tensor) -> Tensor:
        return self.si(self.conv(x), cond)


class StyleUNet(Module):
    """3-level encoder (stride-2 convs, 32->64->128) + style-conditioned decoder.

    All three planes share one set of weights; the decoder merges upsampled
    coarse features with the matching encoder skip via a 1x1 pre-projection,
    then a StyleConv. A final upsample + 1x1 StyleConv restores Np and Cp.
    """

    LEVELS = 3

    def __init__(self, channels: int, cond_dim: int, rng: np.random.Generator,
                 res: int, widths=(32, 64, 128), dtype=np.float32):
        super().__init__()
        if res % (2 ** self.LEVELS) != 0:
            raise ValueError(
                f"triplane resolution {res} not divisible by 2^{self.LEVELS}")
        self.res = res
        w0, w1, w2 = widths
        self.enc0 = Conv2d(channels, w0, 3, rng, stride=2, dtype=dtype)
        self.enc1 = Conv2d(w0, w1, 3, rng, stride=2, dtype=dtype)
        self.enc2 = Conv2d(w1, w2, 3, rng, stride=2, dtype=dtype)
        self.pre1 = Conv2d(w2, w1, 1, rng, dtype=dtype)
        self.dec1 = StyleConv(2 * w1, w1, cond_dim, rng, dtype=dtype)
        self.pre0 = Conv2d(w1, w0, 1, rng, dtype=dtype)
        self.dec0 = StyleConv(2 * w0, w0, cond_dim, rng, dtype=dtype)
        self.out = StyleConv(w0, channels, cond_dim, rng, kernel=1, dtype=dtype)

    def __call__(self, tri: Triplane, cond: Tensor) -> Triplane:
        B, P, C, res, _ = tri.planes.shape
        x = ops.reshape(tri.planes, (B * P, C, res, res))
        cond3 = ops.reshape(ops.broadcast_to(
            ops.reshape(cond, (B, 1, cond.shape[-1])), (B, P, cond.shape[-1])),
            (B * P, cond.shape[-1]))
        fc0 = ops.relu(self.enc0(x))
        fc1 = ops.relu(self.enc1(fc0))
        fc2 = ops.relu(self.enc2(fc1))
        up1 = self.pre1(ops.upsample_nearest(fc2, 2))
        fr1 = ops.relu(self.dec1(ops.concat([up1, fc1], axis=1), cond3))
        up0 = self.pre0(ops.upsample_nearest(fr1, 2))
        fr0 = ops.relu(self.dec0(ops.concat([up0, fc0], axis=1), cond3))
        out = self.out(ops.upsample_nearest(fr0, 2), cond3)
        return Triplane(planes=ops.reshape(out, (B, P, C, res, res)))


class GaussianDecoder(Module):
    """Shallow shared MLP from sampled triplane features to attributes.

    Heads apply range-enforcing activations: offsets delta_max*tanh, scales
    s_max*sigmoid, opacity sigmoid, rotations normalized about identity.
    """

    def __init__(self, in_dim: int, rng: np.random.Generator, res: int = 64,
                 sh_degree: int = 1, s_max: float = 0.2, hidden: int = 128,
                 dtype=np.float32):
        super().__init__()
        self.sh_degree = sh_degree
        self.n_sh = (sh_degree + 1) ** 2
        self.delta_max = 2.0 / res * 4.0
        self.s_max = s_max
        self.fc1 = Linear(in_dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, hidden, rng, dtype=dtype)
        out_dim = 3 + 4 + 3 + 3 * self.n_sh + 1
        self.head = Linear(hidden, out_dim, rng, dtype=dtype, w_scale=0.01)
        bias = np.zeros(out_dim, dtype=dtype)
        bias[3] = 1.0  # quaternion w: identity rotation at zero activations
        self.head.b = Tensor(bias, requires_grad=True)

    def __call__(self, feats: Tensor, points: Tensor) -> GaussianAttributes:
        if feats.shape[:2] != points.shape[:2]:
            raise ShapeError(
                f"gaussian_decoder: features {feats.shape} not row-aligned "
                f"with points {points.shape}")
        B, N = feats.shape[:2]
        h = ops.relu(self.fc2(ops.relu(self.fc1(feats))))
        raw = self.head(h)
        off = ops.mul(ops.tanh(raw[..., 0:3]), ops.const_like(self.delta_max, raw))
        quat = raw[..., 3:7]
        qn = ops.sqrt(ops.add(ops.tsum(ops.mul(quat, quat), axis=-1, keepdims=True),
                              ops.const_like(1e-12, quat)))
        quat = ops.div(quat, qn)
        scales = ops.mul(ops.sigmoid(raw[..., 7:10]), ops.const_like(self.s_max, raw))
        sh = ops.reshape(raw[..., 10:10 + 3 * self.n_sh], (B, N, self.n_sh, 3))
        opac = ops.sigmoid(raw[..., 10 + 3 * self.n_sh])
        return GaussianAttributes(
            positions=ops.add(points, off), rotations=quat, scales=scales,
            sh_coeffs=sh, opacities=opac, offsets=off)
