"""Backward-mapping resampling engine.

Images are (H, W, C) float64 arrays with values normalized to [0, 1] at I/O
boundaries; masks are (H, W) uint8 in {0, 1}. Sizes are passed as (w, h).

All warps share the same conventions: per output pixel the backward map
gives a source point; a window is anchored at its rounded position (half
away from zero); taps outside the source are clamped to the edge; output
pixels whose source point falls outside the image are void and set to 0.

Per-pixel work is independent, so the engine optionally partitions output
rows across a thread pool; results are bit-identical for any thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .grid import rescale_offsets_field
from .xform import BackwardMap, jacobian_field

_DET_EPS = 1e-12

# window offsets (i, j) from (-1, -1) to (1, 1), i along x, row-major
WINDOW = [(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)]


def default_threads() -> int:
    env = os.environ.get("WARPCORE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _row_chunks(height: int, threads: int):
    threads = max(1, min(threads, height))
    bounds = np.linspace(0, height, threads + 1, dtype=int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _run_rows(fn, height: int, threads: int | None) -> None:
    chunks = _row_chunks(height, threads if threads else default_threads())
    if len(chunks) == 1:
        fn(*chunks[0])
        return
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        list(pool.map(lambda c: fn(*c), chunks))


def keys_cubic(t):
    """Cubic convolution kernel (Keys, a = -0.5)."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    a = -0.5
    near = ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    far = a * (((t - 5.0) * t + 8.0) * t - 4.0)
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def _grid(dst_wh, y0, y1):
    dst_w, _ = dst_wh
    ys, xs = np.mgrid[y0:y1, 0:dst_w].astype(np.float64)
    return xs, ys


def _inside(xs, ys, src_wh):
    src_w, src_h = src_wh
    return (
        np.isfinite(xs)
        & np.isfinite(ys)
        & (xs >= 0.0)
        & (xs <= src_w - 1.0)
        & (ys >= 0.0)
        & (ys <= src_h - 1.0)
    )


def compute_mask(bmap: BackwardMap, src_wh, dst_wh, threads: int | None = None) -> np.ndarray:
    """Validity mask on the target grid: 1 iff the source point is in-bounds."""
    dst_w, dst_h = dst_wh
    mask = np.zeros((dst_h, dst_w), dtype=np.uint8)

    def rows(y0, y1):
        xs, ys = _grid(dst_wh, y0, y1)
        sx, sy = bmap.evaluate(xs, ys)
        mask[y0:y1] = _inside(sx, sy, src_wh).astype(np.uint8)

    _run_rows(rows, dst_h, threads)
    return mask


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.size == 0:
        raise ShapeMismatch(f"expected non-empty (H, W, C) image, got shape {img.shape}")
    return img


def warp_bicubic(img, bmap: BackwardMap, dst_wh, threads: int | None = None):
    """4x4 cubic-convolution warp; returns (out, mask)."""
    img = _check_image(img)
    src_h, src_w, nc = img.shape
    dst_w, dst_h = dst_wh
    out = np.zeros((dst_h, dst_w, nc), dtype=np.float64)
    mask = np.zeros((dst_h, dst_w), dtype=np.uint8)

    def rows(y0, y1):
        xs, ys = _grid(dst_wh, y0, y1)
        sx, sy = bmap.evaluate(xs, ys)
        valid = _inside(sx, sy, (src_w, src_h))
        sx = np.where(valid, sx, 0.0)
        sy = np.where(valid, sy, 0.0)
        fx = np.floor(sx)
        fy = np.floor(sy)
        acc = np.zeros((y1 - y0, dst_w, nc))
        for j in (-1, 0, 1, 2):
            ty = np.clip(fy + j, 0, src_h - 1).astype(np.intp)
            wy = keys_cubic(sy - (fy + j))
            for i in (-1, 0, 1, 2):
                tx = np.clip(fx + i, 0, src_w - 1).astype(np.intp)
                w = wy * keys_cubic(sx - (fx + i))
                acc += w[:, :, None] * img[ty, tx]
        acc[~valid] = 0.0
        out[y0:y1] = acc
        mask[y0:y1] = valid.astype(np.uint8)

    _run_rows(rows, dst_h, threads)
    return out, mask


@dataclass
class ResampleGeometry:
    """Precomputed 3x3 window geometry for every valid target pixel.

    flat index order matches WINDOW; tap_idx indexes the flattened source
    (y * W + x) after edge clamping; offsets are the rescaled 2-vectors
    interleaved as (o0x, o0y, o1x, o1y, ...).
    """

    valid_idx: np.ndarray  # (Nv,) flat target indices
    tap_idx: np.ndarray  # (Nv, 9) flat source indices
    offsets: np.ndarray  # (Nv, 18) rescaled offsets
    mask: np.ndarray  # (H', W') uint8
    dst_wh: tuple
    src_wh: tuple


def resample_geometry(bmap: BackwardMap, src_wh, dst_wh, eps: float = 0.5) -> ResampleGeometry:
    """Window taps and deformation-rescaled offsets on the full target grid.

    Pixels mapping outside the source or with a singular local Jacobian are
    excluded (void).
    """
    src_w, src_h = src_wh
    dst_w, dst_h = dst_wh
    xs, ys = _grid(dst_wh, 0, dst_h)
    sx, sy = bmap.evaluate(xs, ys)
    ux, uy, vx, vy = jacobian_field(bmap, xs, ys, eps)
    det = ux * vy - vx * uy
    finite_j = np.isfinite(ux) & np.isfinite(uy) & np.isfinite(vx) & np.isfinite(vy)
    valid = _inside(sx, sy, src_wh) & finite_j & (np.abs(det) > _DET_EPS)
    mask = valid.astype(np.uint8)

    vflat = valid.ravel()
    valid_idx = np.flatnonzero(vflat)
    sxv = sx.ravel()[valid_idx]
    syv = sy.ravel()[valid_idx]
    rcx = round_half_away(sxv)
    rcy = round_half_away(syv)

    di = np.array([i for i, _ in WINDOW], dtype=np.float64)
    dj = np.array([j for _, j in WINDOW], dtype=np.float64)
    px = rcx[:, None] + di[None, :]
    py = rcy[:, None] + dj[None, :]
    ox = px - sxv[:, None]
    oy = py - syv[:, None]
    rx, ry = rescale_offsets_field(
        ox, oy, ux.ravel()[valid_idx], uy.ravel()[valid_idx], vx.ravel()[valid_idx], vy.ravel()[valid_idx]
    )
    offsets = np.empty((valid_idx.size, 18))
    offsets[:, 0::2] = rx
    offsets[:, 1::2] = ry

    tx = np.clip(px, 0, src_w - 1).astype(np.intp)
    ty = np.clip(py, 0, src_h - 1).astype(np.intp)
    tap_idx = ty * src_w + tx
    return ResampleGeometry(valid_idx, tap_idx, offsets, mask, tuple(dst_wh), tuple(src_wh))


def spline_weights(offsets: np.ndarray) -> np.ndarray:
    """Separable cubic weights on rescaled offsets, renormalized to sum 1.

    Windows whose weights cancel out (possible under strong magnification)
    fall back to the nearest tap.
    """
    w = keys_cubic(offsets[:, 0::2]) * keys_cubic(offsets[:, 1::2])
    s = w.sum(axis=1)
    bad = np.abs(s) < 1e-8
    if np.any(bad):
        w[bad] = 0.0
        w[bad, 4] = 1.0  # window center, offset (0, 0)
        s = np.where(bad, 1.0, s)
    return w / s[:, None]


def warp_adaptive_fixed(img, bmap: BackwardMap, dst_wh, threads: int | None = None):
    """3x3 warp with the fixed cubic spline on the adaptive elliptical grid."""
    img = _check_image(img)
    src_h, src_w, nc = img.shape
    geo = resample_geometry(bmap, (src_w, src_h), dst_wh)
    weights = spline_weights(geo.offsets)
    dst_w, dst_h = dst_wh
    out = np.zeros((dst_h * dst_w, nc), dtype=np.float64)
    flat = img.reshape(-1, nc)

    n = geo.valid_idx.size
    chunks = _row_chunks(n, threads if threads else default_threads())

    def run(a, b):
        out[geo.valid_idx[a:b]] = np.einsum(
            "nk,nkc->nc", weights[a:b], flat[geo.tap_idx[a:b]]
        )

    if len(chunks) == 1:
        run(*chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            list(pool.map(lambda c: run(*c), chunks))
    return out.reshape(dst_h, dst_w, nc), geo.mask


def warp_with_kernels(feat, bmap: BackwardMap, kernels, dst_wh, threads: int | None = None):
    """Linear resampling with externally supplied per-pixel kernels.

    kernels: (H', W', C, 3, 3) for depthwise weights or (H', W', 1, 3, 3)
    shared across channels; k[..., i+1, j+1] weighs the tap at
    (round(x)+i, round(y)+j). Weights are used as given (no normalization).
    """
    feat = _check_image(feat)
    src_h, src_w, nc = feat.shape
    dst_w, dst_h = dst_wh
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.shape[:2] != (dst_h, dst_w) or kernels.shape[3:] != (3, 3):
        raise ShapeMismatch(f"kernel field shape {kernels.shape} does not match dst {dst_wh}")
    kc = kernels.shape[2]
    if kc not in (1, nc):
        raise ShapeMismatch(f"kernel channels {kc} incompatible with feature channels {nc}")

    geo = resample_geometry(bmap, (src_w, src_h), dst_wh)
    kflat = kernels.reshape(dst_h * dst_w, kc, 9)[geo.valid_idx]
    flat = feat.reshape(-1, nc)
    out = np.zeros((dst_h * dst_w, nc), dtype=np.float64)

    n = geo.valid_idx.size
    chunks = _row_chunks(n, threads if threads else default_threads())

    def run(a, b):
        taps = flat[geo.tap_idx[a:b]]  # (n, 9, C)
        if kc == 1:
            out[geo.valid_idx[a:b]] = np.einsum("nk,nkc->nc", kflat[a:b, 0, :], taps)
        else:
            out[geo.valid_idx[a:b]] = np.einsum("nck,nkc->nc", kflat[a:b], taps)

    if len(chunks) == 1:
        run(*chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            list(pool.map(lambda c: run(*c), chunks))
    return out.reshape(dst_h, dst_w, nc), geo.mask
