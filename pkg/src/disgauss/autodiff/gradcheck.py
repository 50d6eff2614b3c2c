"""Finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, no_grad


def grad_check(f, inputs: list[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be scalar-valued and smooth at ``inputs`` (keep relu kinks and
    clamp boundaries away from the evaluation point). Error metric per
    coordinate: |analytic - numeric| / max(1, |numeric|).
    """
    out = f(*inputs)
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise ValueError("grad_check: non-finite function value")
    for t in inputs:
        t.grad = None
    backward(out)
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.isfinite(analytic).all():
            raise ValueError("grad_check: non-finite analytic gradient")
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                hi = float(f(*inputs).data)
                flat[i] = orig - eps
                lo = float(f(*inputs).data)
            flat[i] = orig
            numeric = (hi - lo) / (2 * eps)
            if not np.isfinite(numeric):
                raise ValueError("grad_check: non-finite numeric gradient")
            err = abs(float(analytic.reshape(-1)[i]) - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
