"""Disentangling encoder-adapters and latent-space constraints.

Image -> feature backbone -> dual diagonal-Gaussian posteriors -> sampled
codes -> per-branch conditions; KL against the unit prior and a variational
mutual-information bound realized by a lightweight convolutional encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Conv2d, Linear, Module, Tensor, ops
from .autodiff.tensor import ShapeError

LOGVAR_MIN = -8.0
LOGVAR_MAX = 4.0
LN_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PosteriorGaussian:
    mean: Tensor          # (B, d)
    log_variance: Tensor  # (B, d), clamped to [-8, 4]


@dataclass
class LatentState:
    posterior_apr: PosteriorGaussian
    posterior_pcd: PosteriorGaussian
    z_apr: Tensor
    z_pcd: Tensor
    c_apr: Tensor
    c_pcd: Tensor


class ImageBackbone(Module):
    """4-block stride-2/1 conv feature extractor, trainable from scratch.

    64x64x3 -> 8x8x128 by default (blocks 1-3 halve, block 4 keeps size).
    No implicit resizing: wrong input resolution raises.
    """

    def __init__(self, rng: np.random.Generator, image_size: int = 64,
                 out_ch: int = 128, dtype=np.float32):
        super().__init__()
        self.image_size = image_size
        self.out_ch = out_ch
        self.feat_hw = image_size // 8
        self.c1 = Conv2d(3, 32, 3, rng, stride=2, dtype=dtype)
        self.c2 = Conv2d(32, 64, 3, rng, stride=2, dtype=dtype)
        self.c3 = Conv2d(64, out_ch, 3, rng, stride=2, dtype=dtype)
        self.c4 = Conv2d(out_ch, out_ch, 3, rng, stride=1, dtype=dtype)

    def __call__(self, images: Tensor) -> Tensor:
        """images (B, 3, H, W) in [0,1] -> features (B, C, H/8, W/8)."""
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeError(f"backbone: expected (B,3,H,W), got {images.shape}")
        if images.shape[2] != self.image_size or images.shape[3] != self.image_size:
            raise ShapeError(
                f"backbone: resolution {images.shape[2:]} != "
                f"{(self.image_size, self.image_size)} (no implicit resize)")
        h = ops.relu(self.c1(images))
        h = ops.relu(self.c2(h))
        h = ops.relu(self.c3(h))
        return ops.relu(self.c4(h))


class PosteriorHeads(Module):
    """Flatten -> shared linear -> two (mean, log-variance) heads."""

    def __init__(self, rng: np.random.Generator, in_dim: int, d_apr: int = 16,
                 d_pcd: int = 16, hidden: int = 256, dtype=np.float32):
        super().__init__()
        self.d_apr = d_apr
        self.d_pcd = d_pcd
        self.shared = Linear(in_dim, hidden, rng, dtype=dtype)
        self.head_apr = Linear(hidden, 2 * d_apr, rng, dtype=dtype, w_scale=0.01)
        self.head_pcd = Linear(hidden, 2 * d_pcd, rng, dtype=dtype, w_scale=0.01)

    def __call__(self, feats: Tensor) -> tuple[PosteriorGaussian, PosteriorGaussian]:
        B = feats.shape[0]
        flat = ops.reshape(feats, (B, -1))
        h = ops.relu(self.shared(flat))
        outs = []
        for head, d in ((self.head_apr, self.d_apr), (self.head_pcd, self.d_pcd)):
            raw = head(h)
            mean = raw[:, :d]
            logvar = ops.clip(raw[:, d:], LOGVAR_MIN, LOGVAR_MAX)
            outs.append(PosteriorGaussian(mean=mean, log_variance=logvar))
        return outs[0], outs[1]


def reparameterize(post: PosteriorGaussian, rng: np.random.Generator) -> Tensor:
    """z = mean + exp(log_variance / 2) * eps with eps ~ N(0, I).

    Gradients flow to mean and log_variance only; eps is a constant draw from
    the seeded generator, so fixed seeds reproduce z exactly.
    """
    eps = rng.standard_normal(post.mean.shape).astype(post.mean.dtype)
    std = ops.exp(ops.mul(post.log_variance, ops.const_like(0.5, post.log_variance)))
    return ops.add(post.mean, ops.mul(std, Tensor(eps)))


class Adapter(Module):
    """2-layer branch-specific map from latent code to condition vector."""

    def __init__(self, rng: np.random.Generator, d: int, cond_dim: int = 64,
                 hidden: int = 64, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(d, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, cond_dim, rng, dtype=dtype)

    def __call__(self, z: Tensor) -> Tensor:
        return self.fc2(ops.relu(self.fc1(z)))


def kl_divergence(post: PosteriorGaussian) -> Tensor:
    """KL(q || N(0, I)) in closed form, summed over dims, mean over batch."""
    var = ops.exp(post.log_variance)
    mu2 = ops.mul(post.mean, post.mean)
    per_dim = ops.sub(ops.add(mu2, var),
                      ops.add(ops.const_like(1.0, var), post.log_variance))
    return ops.mul(ops.tmean(ops.tsum(per_dim, axis=-1)), ops.const_like(0.5, var))


def kl_per_dim(post: PosteriorGaussian) -> np.ndarray:
    """Per-dimension KL averaged over the batch (diagnostic, plain numpy)."""
    mu = post.mean.data
    lv = post.log_variance.data
    return (0.5 * (mu ** 2 + np.exp(lv) - 1.0 - lv)).mean(axis=0)


class LightEncoder(Module):
    """Variational posterior estimator over z_apr from a rendered view."""

    def __init__(self, rng: np.random.Generator, d: int, image_size: int = 64,
                 dtype=np.float32):
        super().__init__()
        self.d = d
        self.image_size = image_size
        self.c1 = Conv2d(3, 16, 3, rng, stride=2, dtype=dtype)
        self.c2 = Conv2d(16, 32, 3, rng, stride=2, dtype=dtype)
        self.c3 = Conv2d(32, 64, 3, rng, stride=2, dtype=dtype)
        self.head = Linear(64 * (image_size // 8) ** 2, 2 * d, rng,
                           dtype=dtype, w_scale=0.01)

    def __call__(self, images: Tensor) -> PosteriorGaussian:
        """images (B, 3, H, W), gradients flow back into the renderer."""
        if images.shape[2] != self.image_size or images.shape[3] != self.image_size:
            raise ShapeError(
                f"light_enc: resolution {images.shape[2:]} != {self.image_size}")
        h = ops.relu(self.c1(images))
        h = ops.relu(self.c2(h))
        h = ops.relu(self.c3(h))
        raw = self.head(ops.reshape(h, (images.shape[0], -1)))
        mean = raw[:, :self.d]
        logvar = ops.clip(raw[:, self.d:], LOGVAR_MIN, LOGVAR_MAX)
        return PosteriorGaussian(mean=mean, log_variance=logvar)


def mi_loss(z_apr: Tensor, q_post: PosteriorGaussian) -> Tensor:
    """Gaussian NLL -ln Q(z_apr | rendered view), mean over the batch.

    Minimizing this maximizes the variational MI lower bound; the latent
    entropy term is handled by the KL constraint and omitted here.
    """
    d = z_apr.shape[-1]
    inv_var = ops.exp(ops.neg(q_post.log_variance))
    diff = ops.sub(z_apr, q_post.mean)
    quad = ops.mul(ops.mul(diff, diff), inv_var)
    per = ops.add(ops.add(quad, q_post.log_variance),
                  ops.const_like(LN_2PI, quad))
    return ops.mul(ops.tmean(ops.tsum(per, axis=-1)), ops.const_like(0.5, per))


def drl_loss(post_apr: PosteriorGaussian, post_pcd: PosteriorGaussian,
             mi: Tensor | None, beta: float, alpha: float) -> Tensor:
    """beta * (KL_apr + KL_pcd) + alpha * mi."""
    kl = ops.add(kl_divergence(post_apr), kl_divergence(post_pcd))
    total = ops.mul(kl, ops.const_like(beta, kl))
    if mi is not None and alpha != 0.0:
        total = ops.add(total, ops.mul(mi, ops.const_like(alpha, mi)))
    return total
