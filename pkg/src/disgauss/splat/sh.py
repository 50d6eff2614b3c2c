"""Real spherical harmonics color evaluation (degrees 0-2)."""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, ShapeError, ops

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Plain-numpy basis values Y_b(dir), shape (..., (degree+1)^2)."""
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    cols = [np.full_like(x, SH_C0)]
    if degree >= 1:
        cols += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        cols += [SH_C2[0] * x * y, SH_C2[1] * y * z,
                 SH_C2[2] * (2 * z * z - x * x - y * y),
                 SH_C2[3] * x * z, SH_C2[4] * (x * x - y * y)]
    return np.stack(cols, axis=-1)


def sh_eval(coeffs, dirs, degree: int, clamp: bool = True) -> Tensor:
    """Evaluate SH color: sum_b coeffs_b * Y_b(dir) + 0.5, clamped to [0,1].

    coeffs: Tensor (..., B, 3) with B = (degree+1)^2; dirs: Tensor (..., 3)
    unit directions. Differentiable in both.
    """
    coeffs = ops.as_tensor(coeffs)
    dirs = ops.as_tensor(dirs)
    b = coeffs.shape[-2]
    if b != (degree + 1) ** 2:
        raise ShapeError(f"sh_eval: {b} coefficients do not match degree {degree}")
    x = dirs[..., 0:1]
    y = dirs[..., 1:2]
    z = dirs[..., 2:3]
    parts = [ops.broadcast_to(ops.const_like(SH_C0, dirs), x.shape)]
    if degree >= 1:
        parts += [ops.mul(ops.const_like(-SH_C1, dirs), y),
                  ops.mul(ops.const_like(SH_C1, dirs), z),
                  ops.mul(ops.const_like(-SH_C1, dirs), x)]
    if degree >= 2:
        xx, yy, zz = ops.mul(x, x), ops.mul(y, y), ops.mul(z, z)
        parts += [
            ops.mul(ops.const_like(SH_C2[0], dirs), ops.mul(x, y)),
            ops.mul(ops.const_like(SH_C2[1], dirs), ops.mul(y, z)),
            ops.mul(ops.const_like(SH_C2[2], dirs),
                    ops.sub(ops.sub(ops.mul(2.0, zz), xx), yy)),
            ops.mul(ops.const_like(SH_C2[3], dirs), ops.mul(x, z)),
            ops.mul(ops.const_like(SH_C2[4], dirs), ops.sub(xx, yy)),
        ]
    basis = ops.concat(parts, axis=-1)  # (..., B)
    rgb = ops.tsum(ops.mul(coeffs, ops.reshape(basis, basis.shape + (1,))), axis=-2)
    rgb = ops.add(rgb, ops.const_like(0.5, rgb))
    if clamp:
        rgb = ops.clip(rgb, 0.0, 1.0)
    return rgb
