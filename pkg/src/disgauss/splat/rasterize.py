"""Differentiable tile-based rasterization of 3D Gaussian scenes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..autodiff import Tensor, backward_from, ops, record
from .camera import Camera
from .gaussians import GaussianSet, GaussianTensors
from .project import NEAR_PLANE, cov_from_factors, project_gaussian
from .sh import sh_eval

TILE_SIZE = 16
STOP_TRANSMITTANCE = 1e-4
ALPHA_MAX = 0.99
DET_EPS = 1e-12
Q_CUTOFF = 40.0
# binning radius encloses the q <= 40 ellipse exactly, so tile membership
# changes only where the kernel is already cut off (keeps gradients smooth)
FOOTPRINT_SIGMA = float(np.sqrt(Q_CUTOFF) * 1.001)


@dataclass
class RenderedImage:
    """color (H,W,3) in [0,1], alpha (H,W), transmittance (H,W), as Tensors."""

    color: Tensor
    alpha: Tensor
    transmittance: Tensor

    def color_array(self) -> np.ndarray:
        return np.clip(self.color.data, 0.0, 1.0)


def composite(mean2d, cov2d, color, opacity, depth: np.ndarray,
              valid: np.ndarray, height: int, width: int,
              background: np.ndarray, tile_size: int = TILE_SIZE):
    """Depth-sorted alpha compositing as one differentiable tape op.

    mean2d (M,N,2), cov2d (M,N,2,2), color (M,N,3), opacity (M,N) Tensors;
    depth/valid are constants (sort order carries no gradient). Returns
    (color (M,H,W,3), alpha (M,H,W), transmittance (M,H,W)).
    Singular projected covariances (det < 1e-12) are skipped.
    """
    mean2d = ops.as_tensor(mean2d)
    cov2d = ops.as_tensor(cov2d)
    color = ops.as_tensor(color)
    opacity = ops.as_tensor(opacity)
    M, N = opacity.shape
    dt = mean2d.dtype

    a = cov2d.data[..., 0, 0]
    b = 0.5 * (cov2d.data[..., 0, 1] + cov2d.data[..., 1, 0])
    c = cov2d.data[..., 1, 1]
    det = a * c - b * b
    ok = valid & (det > DET_EPS) & np.isfinite(det)
    safe_det = np.where(ok, det, 1.0)
    conic = np.stack([c / safe_det, -b / safe_det, a / safe_det], axis=-1)
    conic = np.ascontiguousarray(np.where(ok[..., None], conic, 0.0), dtype=dt)
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = np.ascontiguousarray(
        np.where(ok, FOOTPRINT_SIGMA * np.sqrt(np.maximum(lam_max, 0.0)), 0.0), dtype=dt)

    # stable depth sort of surviving primitives, ties broken by index
    order = np.zeros((M, N), dtype=np.int32)
    n_order = np.zeros(M, dtype=np.int32)
    for m in range(M):
        idx = np.nonzero(ok[m])[0]
        srt = idx[np.argsort(depth[m, idx], kind="stable")]
        order[m, :len(srt)] = srt
        n_order[m] = len(srt)

    bg = np.ascontiguousarray(background, dtype=dt)
    mean_c = np.ascontiguousarray(mean2d.data, dtype=dt)
    color_c = np.ascontiguousarray(color.data, dtype=dt)
    opac_c = np.ascontiguousarray(opacity.data, dtype=dt)
    out_color, trans, n_contrib = kernels.composite_forward(
        mean_c, conic, color_c, opac_c, radius, order, n_order, bg,
        height, width, tile_size, STOP_TRANSMITTANCE, ALPHA_MAX)

    out_c = Tensor(out_color)
    out_t = Tensor(trans)
    out_a = None  # built below from out_t

    def back_color_trans(g_color, g_trans):
        gm, gc, gcol, gop = kernels.composite_backward(
            mean_c, conic, color_c, opac_c, radius, order, n_order, bg,
            tile_size, STOP_TRANSMITTANCE, ALPHA_MAX, trans, n_contrib,
            np.ascontiguousarray(g_color, dtype=dt),
            np.ascontiguousarray(g_trans, dtype=dt))
        # conic grads -> cov2d grads: dL/dCov = -Conic G Conic, G from (a,b,c)
        G = np.empty(gc.shape[:-1] + (2, 2), dtype=dt)
        G[..., 0, 0] = gc[..., 0]
        G[..., 0, 1] = G[..., 1, 0] = 0.5 * gc[..., 1]
        G[..., 1, 1] = gc[..., 2]
        Cm = np.empty_like(G)
        Cm[..., 0, 0] = conic[..., 0]
        Cm[..., 0, 1] = Cm[..., 1, 0] = conic[..., 1]
        Cm[..., 1, 1] = conic[..., 2]
        gcov = -Cm @ G @ Cm
        gcov = np.where(ok[..., None, None], gcov, 0.0)
        return gm, gcov.astype(dt, copy=False), gcol, gop

    # two tape nodes sharing the kernel backward: color image and transmittance
    zeros_tr = np.zeros_like(trans)
    zeros_cl = np.zeros_like(out_color)
    record("composite_color", out_c, (mean2d, cov2d, color, opacity),
           lambda g: back_color_trans(g, zeros_tr))
    record("composite_trans", out_t, (mean2d, cov2d, color, opacity),
           lambda g: back_color_trans(zeros_cl, g))
    out_a = ops.sub(ops.const_like(1.0, out_t), out_t)
    return out_c, out_a, out_t


def render(gauss: GaussianTensors | GaussianSet, camera: Camera,
           background=(0.0, 0.0, 0.0), tile_size: int = TILE_SIZE,
           sh_degree: int | None = None, near: float = NEAR_PLANE) -> RenderedImage:
    """Render one scene from one camera, differentiably."""
    if isinstance(gauss, GaussianSet):
        if sh_degree is None:
            sh_degree = gauss.sh_degree
        gauss = gauss.to_tensors(dtype=gauss.positions.dtype)
    if sh_degree is None:
        b = gauss.sh_coeffs.shape[-2]
        sh_degree = int(np.sqrt(b)) - 1
    pos = gauss.positions
    n = pos.shape[-2]
    dt = pos.dtype
    if n == 0:
        h, w = camera.height, camera.width
        bg = np.asarray(background, dtype=dt)
        return RenderedImage(
            color=Tensor(np.broadcast_to(bg, (h, w, 3)).copy()),
            alpha=Tensor(np.zeros((h, w), dtype=dt)),
            transmittance=Tensor(np.ones((h, w), dtype=dt)))

    cov3d = cov_from_factors(gauss.rotations, gauss.scales)
    mean2d, cov2d, depth, valid = project_gaussian(pos, cov3d, camera, near=near)

    campos = Tensor(camera.position.astype(dt))
    rel = ops.sub(pos, campos)
    norm = ops.sqrt(ops.tsum(ops.mul(rel, rel), axis=-1, keepdims=True))
    dirs = ops.div(rel, ops.add(norm, ops.const_like(1e-12, rel)))
    rgb = sh_eval(gauss.sh_coeffs, dirs, degree=sh_degree)

    to_batch = lambda t, tail: ops.reshape(t, (1, n) + tail)
    col, alpha, trans = composite(
        to_batch(mean2d, (2,)), to_batch(cov2d, (2, 2)), to_batch(rgb, (3,)),
        ops.reshape(gauss.opacities, (1, n)), depth.reshape(1, n),
        valid.reshape(1, n), camera.height, camera.width,
        np.asarray(background, dtype=dt), tile_size)
    return RenderedImage(color=col[0], alpha=alpha[0], transmittance=trans[0])


def rasterize(gs: GaussianSet, camera: Camera, tile_size: int = TILE_SIZE,
              background=(0.0, 0.0, 0.0)) -> RenderedImage:
    """Non-batched convenience entry point over a concrete GaussianSet."""
    return render(gs, camera, background=background, tile_size=tile_size)


def render_backward(image: RenderedImage, grad_color: np.ndarray,
                    gauss: GaussianTensors,
                    grad_alpha: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Pull loss gradients over the image back to the Gaussian parameters.

    Requires that ``image`` came from a rasterize/render call whose inputs
    had requires_grad set (the forward context); raises otherwise.
    """
    if image.color.node is None:
        raise RuntimeError("render_backward: no recorded forward context")
    roots = [image.color]
    grads = [np.asarray(grad_color, dtype=image.color.dtype)]
    if grad_alpha is not None:
        roots.append(image.alpha)
        grads.append(np.asarray(grad_alpha, dtype=image.alpha.dtype))
    for t in (gauss.positions, gauss.rotations, gauss.scales,
              gauss.sh_coeffs, gauss.opacities):
        t.grad = None
    backward_from(roots, grads)
    out = {}
    for name, t in (("positions", gauss.positions), ("rotations", gauss.rotations),
                    ("scales", gauss.scales), ("sh_coeffs", gauss.sh_coeffs),
                    ("opacities", gauss.opacities)):
        out[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
    return out
