"""Gaussian parameterization and perspective covariance projection."""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, ops
from .camera import Camera

NEAR_PLANE = 0.01
COV2D_FLOOR = 0.3  # low-pass floor added to the projected covariance diagonal


def quat_to_rotmat(q) -> Tensor:
    """Unit-normalize quaternions (..., 4) wxyz and build (..., 3, 3) rotations."""
    q = ops.as_tensor(q)
    if np.any(np.linalg.norm(q.data, axis=-1) < 1e-12):
        raise ValueError("zero quaternion cannot define a rotation")
    norm = ops.sqrt(ops.tsum(ops.mul(q, q), axis=-1, keepdims=True))
    q = ops.div(q, norm)
    w, x = q[..., 0:1], q[..., 1:2]
    y, z = q[..., 2:3], q[..., 3:4]
    two = ops.const_like(2.0, q)
    one = ops.const_like(1.0, q)

    def m(a, b):
        return ops.mul(a, b)

    rows = [
        ops.sub(one, m(two, ops.add(m(y, y), m(z, z)))),
        m(two, ops.sub(m(x, y), m(w, z))),
        m(two, ops.add(m(x, z), m(w, y))),
        m(two, ops.add(m(x, y), m(w, z))),
        ops.sub(one, m(two, ops.add(m(x, x), m(z, z)))),
        m(two, ops.sub(m(y, z), m(w, x))),
        m(two, ops.sub(m(x, z), m(w, y))),
        m(two, ops.add(m(y, z), m(w, x))),
        ops.sub(one, m(two, ops.add(m(x, x), m(y, y)))),
    ]
    flat = ops.concat(rows, axis=-1)
    return ops.reshape(flat, q.shape[:-1] + (3, 3))


def cov_from_factors(rotation, scale) -> Tensor:
    """Sigma = R diag(s^2) R^T from unit quaternion + positive scales.

    Symmetric PSD by construction; accepts leading batch dims.
    """
    R = quat_to_rotmat(rotation)
    s = ops.as_tensor(scale)
    s2 = ops.mul(s, s)
    rs = ops.mul(R, ops.reshape(s2, s2.shape[:-1] + (1, 3)))
    return ops.matmul(rs, ops.swapaxes(R, -1, -2))


def project_gaussian(means, cov3d, camera: Camera, near: float = NEAR_PLANE):
    """Perspective-project 3D Gaussians for one camera.

    means (..., N, 3) Tensor, cov3d (..., N, 3, 3) Tensor. Returns
    (mean2d (...,N,2), cov2d (...,N,2,2) with the low-pass diagonal floor,
    depth (...,N) numpy, valid (...,N) numpy bool). Primitives behind the
    near plane are flagged invalid (culled), not errors.
    """
    means = ops.as_tensor(means)
    cov3d = ops.as_tensor(cov3d)
    dt = means.dtype
    W = Tensor(camera.rotation.astype(dt))
    trans = Tensor(camera.translation.astype(dt))
    t = ops.add(ops.matmul(means, ops.swapaxes(W, -1, -2)), trans)
    tz_raw = t[..., 2]
    valid = tz_raw.data > near
    tx = t[..., 0]
    ty = t[..., 1]
    tz = ops.where(valid, tz_raw, ops.const_like(near, t))  # guard culled rows
    inv_z = ops.div(ops.const_like(1.0, t), tz)
    fx = ops.const_like(camera.fx, t)
    fy = ops.const_like(camera.fy, t)
    mean_x = ops.add(ops.mul(fx, ops.mul(tx, inv_z)), ops.const_like(camera.cx, t))
    mean_y = ops.add(ops.mul(fy, ops.mul(ty, inv_z)), ops.const_like(camera.cy, t))
    mean2d = ops.stack([mean_x, mean_y], axis=-1)

    # J rows: (fx/z, 0, -fx x/z^2), (0, fy/z, -fy y/z^2)
    zero = ops.broadcast_to(ops.const_like(0.0, t), tx.shape)
    inv_z2 = ops.mul(inv_z, inv_z)
    j00 = ops.mul(fx, inv_z)
    j02 = ops.neg(ops.mul(fx, ops.mul(tx, inv_z2)))
    j11 = ops.mul(fy, inv_z)
    j12 = ops.neg(ops.mul(fy, ops.mul(ty, inv_z2)))
    J = ops.stack([
        ops.stack([j00, zero, j02], axis=-1),
        ops.stack([zero, j11, j12], axis=-1),
    ], axis=-2)  # (..., N, 2, 3)

    cov_cam = ops.matmul(ops.matmul(W, cov3d), ops.swapaxes(W, -1, -2))
    cov2d = ops.matmul(ops.matmul(J, cov_cam), ops.swapaxes(J, -1, -2))
    floor = Tensor((COV2D_FLOOR * np.eye(2)).astype(dt))
    cov2d = ops.add(cov2d, floor)
    return mean2d, cov2d, tz_raw.data.copy(), valid
