"""Differentiable operations.

Feature maps are (C, H, W); fully-connected inputs are (n_in,) or batched
(N, n_in). Every op returns a new node; gradients are defined with respect
to all Tensor arguments.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch
from .tensor import Tensor, make


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make(data, (a, b), bwd)


def scale(t: Tensor, c) -> Tensor:
    """Multiply by a constant scalar or ndarray (no gradient through c)."""
    c = np.asarray(c, dtype=np.float64)

    def bwd(g):
        return (_unbroadcast(g * c, t.shape),)

    return make(t.data * c, (t,), bwd)


def relu(t: Tensor) -> Tensor:
    keep = t.data > 0

    def bwd(g):
        return (g * keep,)

    return make(np.where(keep, t.data, 0.0), (t,), bwd)


def leaky_relu(t: Tensor, slope: float = 0.2) -> Tensor:
    keep = t.data > 0

    def bwd(g):
        return (g * np.where(keep, 1.0, slope),)

    return make(np.where(keep, t.data, slope * t.data), (t,), bwd)


def concat(ts, axis: int = 0) -> Tensor:
    sizes = [t.data.shape[axis] for t in ts]
    data = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return make(data, tuple(ts), bwd)


def tensor_sum(t: Tensor) -> Tensor:
    def bwd(g):
        return (np.broadcast_to(g, t.shape).copy(),)

    return make(t.data.sum(), (t,), bwd)


def square_sum(t: Tensor) -> Tensor:
    def bwd(g):
        return (2.0 * g * t.data,)

    return make((t.data * t.data).sum(), (t,), bwd)


def abs_sum(t: Tensor) -> Tensor:
    def bwd(g):
        return (g * np.sign(t.data),)

    return make(np.abs(t.data).sum(), (t,), bwd)


def reshape(t: Tensor, shape) -> Tensor:
    def bwd(g):
        return (g.reshape(t.data.shape),)

    return make(t.data.reshape(shape), (t,), bwd)


def slice_ch(t: Tensor, start: int, stop: int) -> Tensor:
    """Slice along the leading (channel) axis."""

    def bwd(g):
        full = np.zeros_like(t.data)
        full[start:stop] = g
        return (full,)

    return make(t.data[start:stop], (t,), bwd)


def fc(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map; x may be (n_in,) or (N, n_in)."""
    if w.data.ndim != 2 or x.data.shape[-1] != w.data.shape[1] or b.data.shape != (w.data.shape[0],):
        raise ShapeMismatch(f"fc shapes x{x.shape} w{w.shape} b{b.shape}")
    data = x.data @ w.data.T + b.data

    def bwd(g):
        g2 = g.reshape(-1, w.data.shape[0])
        x2 = x.data.reshape(-1, w.data.shape[1])
        return g @ w.data, g2.T @ x2, g2.sum(axis=0)

    return make(data, (x, w, b), bwd)


def _pad_hw(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw)))


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(C, H, W) zero-padded to same-size windows -> (H*W, C*kh*kw)."""
    c, h, w = x.shape
    if kh == 1 and kw == 1:
        return x.reshape(c, h * w).T
    xp = _pad_hw(x, (kh - 1) // 2, (kw - 1) // 2)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (C, H, W, kh, kw)
    return win.transpose(1, 2, 0, 3, 4).reshape(h * w, c * kh * kw)


def _col2im(dcol_cm: np.ndarray, shape, kh: int, kw: int) -> np.ndarray:
    """Adjoint of _im2col from the channel-major layout (C*kh*kw, H*W)."""
    c, h, w = shape
    if kh == 1 and kw == 1:
        return dcol_cm.reshape(shape)
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    dxp = np.zeros((c, h + 2 * ph, w + 2 * pw))
    d = dcol_cm.reshape(c, kh, kw, h, w)
    for ki in range(kh):
        for kj in range(kw):
            dxp[:, ki : ki + h, kj : kj + w] += d[:, ki, kj]
    return dxp[:, ph : ph + h, pw : pw + w]


def _check_conv(x: Tensor, w: Tensor, b: Tensor):
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeMismatch(f"conv2d shapes x{x.shape} w{w.shape}")
    cout, cin, kh, kw = w.data.shape
    if cin != x.data.shape[0] or kh % 2 == 0 or kw % 2 == 0 or b.data.shape != (cout,):
        raise ShapeMismatch(f"conv2d shapes x{x.shape} w{w.shape} b{b.shape}")
    return cout, cin, kh, kw


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-size cross-correlation with zero padding."""
    cout, cin, kh, kw = _check_conv(x, w, b)
    _, h, wd = x.data.shape
    col = _im2col(x.data, kh, kw)
    wmat = w.data.reshape(cout, -1)
    out = (col @ wmat.T + b.data).reshape(h, wd, cout).transpose(2, 0, 1)

    def bwd(g):
        g2 = np.ascontiguousarray(g).reshape(cout, h * wd)
        dw = (g2 @ col).reshape(w.data.shape)
        dx = _col2im(wmat.T @ g2, x.data.shape, kh, kw)
        return dx, dw, g2.sum(axis=1)

    return make(out, (x, w, b), bwd)


def mask_window_ratio(mask: np.ndarray, kh: int, kw: int):
    """Partial-convolution renormalization: (k^2 / valid-tap count, new mask)."""
    m = np.asarray(mask, dtype=np.float64)
    mp = _pad_hw(m[None], (kh - 1) // 2, (kw - 1) // 2)
    cnt = sliding_window_view(mp, (kh, kw), axis=(1, 2))[0].sum(axis=(-1, -2))
    alive = cnt > 0
    ratio = np.where(alive, (kh * kw) / np.where(alive, cnt, 1.0), 0.0)
    return ratio, alive.astype(np.uint8)


def pconv2d(x: Tensor, mask: np.ndarray, w: Tensor, b: Tensor):
    """Partial convolution; returns (Tensor, updated mask).

    Output is w^T(x * m) * k^2 / sum(m over window) + b where the window has
    any valid tap, 0 elsewhere. The mask is a plain array, not a graph node.
    """
    cout, cin, kh, kw = _check_conv(x, w, b)
    _, h, wd = x.data.shape
    if np.shape(mask) != (h, wd):
        raise ShapeMismatch(f"mask shape {np.shape(mask)} vs image ({h}, {wd})")
    m = np.asarray(mask, dtype=np.float64)
    ratio, newmask = mask_window_ratio(m, kh, kw)
    xm = x.data * m[None]
    col = _im2col(xm, kh, kw)
    wmat = w.data.reshape(cout, -1)
    y = (col @ wmat.T).reshape(h, wd, cout).transpose(2, 0, 1)
    out = (y * ratio[None] + b.data[:, None, None]) * newmask[None]

    def bwd(g):
        ge = g * newmask[None]
        gy = (ge * ratio[None]).reshape(cout, h * wd)
        dw = (gy @ col).reshape(w.data.shape)
        dx = _col2im(wmat.T @ gy, x.data.shape, kh, kw) * m[None]
        return dx, dw, ge.sum(axis=(1, 2))

    return make(out, (x, w, b), bwd), newmask


def depth_to_space(x: Tensor, s: int) -> Tensor:
    """(C*s^2, H, W) -> (C, sH, sW) sub-pixel rearrangement."""
    c2, h, w = x.data.shape
    if s < 1 or c2 % (s * s) != 0:
        raise ShapeMismatch(f"channels {c2} not divisible by {s}^2")
    c = c2 // (s * s)
    data = x.data.reshape(c, s, s, h, w).transpose(0, 3, 1, 4, 2).reshape(c, h * s, w * s)

    def bwd(g):
        gr = g.reshape(c, h, s, w, s).transpose(0, 2, 4, 1, 3).reshape(c2, h, w)
        return (gr,)

    return make(data, (x,), bwd)


def space_to_depth(x: Tensor, s: int) -> Tensor:
    """Inverse of depth_to_space."""
    c, hs, ws = x.data.shape
    if s < 1 or hs % s != 0 or ws % s != 0:
        raise ShapeMismatch(f"spatial dims ({hs}, {ws}) not divisible by {s}")
    h, w = hs // s, ws // s
    data = x.data.reshape(c, h, s, w, s).transpose(0, 2, 4, 1, 3).reshape(c * s * s, h, w)

    def bwd(g):
        gr = g.reshape(c, s, s, h, w).transpose(0, 3, 1, 4, 2).reshape(c, hs, ws)
        return (gr,)

    return make(data, (x,), bwd)


def residual_block(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """x + conv(relu(conv(x))) with channel-preserving weights."""
    return add(x, conv2d(relu(conv2d(x, w1, b1)), w2, b2))


def pconv_residual_block(x: Tensor, mask, w1, b1, w2, b2):
    """Residual block built from partial convolutions; returns (out, mask)."""
    y, m = pconv2d(x, mask, w1, b1)
    y, m = pconv2d(relu(y), m, w2, b2)
    return add(x, y), m


def kernel_warp(feat: Tensor, kern: Tensor, tap_idx: np.ndarray, valid_idx: np.ndarray, dst_hw):
    """Per-pixel weighted gather, the learned-kernel resampling core.

    feat: (C, H, W); kern: (Nv, C, 9) depthwise or (Nv, 1, 9) shared;
    tap_idx: (Nv, 9) flat source indices; valid_idx: (Nv,) flat target
    indices. Returns (C, H', W') with void pixels zero. Differentiable in
    feat and kern.
    """
    c = feat.data.shape[0]
    dst_h, dst_w = dst_hw
    kc = kern.data.shape[1]
    if kern.data.ndim != 3 or kern.data.shape[2] != 9 or kc not in (1, c):
        raise ShapeMismatch(f"kernel field shape {kern.shape} vs {c} channels")
    if kern.data.shape[0] != tap_idx.shape[0] or tap_idx.shape[0] != valid_idx.shape[0]:
        raise ShapeMismatch("kernel/tap/valid counts disagree")

    flat = feat.data.reshape(c, -1)
    taps = flat[:, tap_idx]  # (C, Nv, 9)
    if kc == 1:
        vals = np.einsum("nk,cnk->cn", kern.data[:, 0, :], taps)
    else:
        vals = np.einsum("nck,cnk->cn", kern.data, taps)
    out = np.zeros((c, dst_h * dst_w))
    out[:, valid_idx] = vals

    def bwd(g):
        gv = g.reshape(c, -1)[:, valid_idx]  # (C, Nv)
        taps_b = feat.data.reshape(c, -1)[:, tap_idx]
        if kc == 1:
            dk = np.einsum("cn,cnk->nk", gv, taps_b)[:, None, :]
            contrib = kern.data[:, 0, :][None, :, :] * gv[:, :, None]  # (C, Nv, 9)
        else:
            dk = np.einsum("cn,cnk->nck", gv, taps_b)
            contrib = kern.data.transpose(1, 0, 2) * gv[:, :, None]
        dflat_t = np.zeros((flat.shape[1], c))
        np.add.at(dflat_t, tap_idx.ravel(), contrib.transpose(1, 2, 0).reshape(-1, c))
        return dflat_t.T.reshape(feat.data.shape), dk

    return make(out.reshape(c, dst_h, dst_w), (feat, kern), bwd)
