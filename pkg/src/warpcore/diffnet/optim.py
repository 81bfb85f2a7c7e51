"""Bias-corrected Adam."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .store import ParamStore


class AdamState:
    def __init__(self, store: ParamStore, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in store.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in store.items()}


def adam_step(store: ParamStore, state: AdamState) -> None:
    """Apply one update from the gradients accumulated in the store."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name, p in store.items():
        g = p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"{name!r}: grad shape {g.shape} vs {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p.data -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
        if not np.all(np.isfinite(p.data)):
            raise ShapeMismatch(f"{name!r}: non-finite values after update")
