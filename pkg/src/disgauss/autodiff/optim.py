"""Adam optimizer and gradient utilities."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class NonFiniteGradient(RuntimeError):
    """Raised when a parameter's gradient contains NaN/Inf."""


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> dict:
    """One Adam update with bias correction, in place on ``params``.

    ``state`` holds {"m": {...}, "v": {...}, "t": int}; pass {} to start.
    Deterministic given inputs. A non-finite gradient raises, naming the
    offending parameter, before any parameter is touched.
    """
    if not state:
        state["m"] = {k: np.zeros_like(p.data) for k, p in params.items()}
        state["v"] = {k: np.zeros_like(p.data) for k, p in params.items()}
        state["t"] = 0
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter '{name}'")
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.data = (p.data - lr * update).astype(p.data.dtype, copy=False)
    return state


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


class Adam:
    """Stateful wrapper around adam_step keyed by parameter names."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state: dict = {}

    def step(self, grads: dict[str, np.ndarray] | None = None):
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state, self.lr,
                  self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
