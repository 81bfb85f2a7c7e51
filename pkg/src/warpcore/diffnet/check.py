"""Gradient verification against central differences."""

from __future__ import annotations

import numpy as np

from .store import ParamStore
from .tensor import backward


def grad_check(f, store: ParamStore, h: float = 1e-4) -> float:
    """Max relative error between reverse-mode and numeric gradients.

    f maps the store to a scalar Tensor. Numeric gradients are central
    differences per coordinate, (f(p+h) - f(p-h)) / 2h in double precision.
    Relative error per coordinate is |a - n| / max(1, |a|, |n|).
    """
    store.zero_grad()
    loss = f(store)
    backward(loss)
    worst = 0.0
    for _, p in store.items():
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(store).data)
            flat[i] = orig - h
            fm = float(f(store).data)
            flat[i] = orig
            num[i] = (fp - fm) / (2 * h)
        num = num.reshape(p.data.shape)
        denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(num)))
        worst = max(worst, float(np.max(np.abs(analytic - num) / denom)))
    return worst
