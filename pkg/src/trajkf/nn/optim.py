"""Adam with bias correction, plus global-norm gradient clipping."""
from __future__ import annotations

import numpy as np

from ..errors import NumericError
from .params import ParamStore


def clip_global_norm(store: ParamStore, max_norm: float = 5.0) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    total = 0.0
    for g in store.grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for g in store.grads.values():
            g *= factor
    return norm


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.99, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update over every parameter; zeroes grads."""
    store.step += 1
    t = store.step
    for name, p in store.params.items():
        g = store.grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    store.zero_grads()
