"""Supervised pair synthesis and image/transform I/O.

A training sample is a square HR patch, a random projective transform M,
the bicubically warped LR image, a fully-valid square crop of it, and the
composed forward transform that maps crop coordinates back into the HR
frame. Directory layout of a split: hr/, lr/ (crops), mask/ (PNG),
tf/ (JSON, composed forward matrix), manifest.jsonl.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import EmptyMask, InvalidParams, IoError, NoValidSquare, UnsupportedFormat
from .warp import compute_mask, warp_bicubic
from .xform import (
    Homography,
    backward_map,
    compose,
    fold_offset,
    output_bounds,
    sample_transform,
    save_transform,
    translation,
)


def load_image(path) -> np.ndarray:
    """8/16-bit PNG -> (H, W, C) float64 in [0, 1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        if not os.path.exists(path):
            raise IoError(f"cannot read {path}")
        raise UnsupportedFormat(f"{path}: not a decodable image")
    if raw.dtype == np.uint8:
        maxval = 255.0
    elif raw.dtype == np.uint16:
        maxval = 65535.0
    else:
        raise UnsupportedFormat(f"{path}: unsupported sample type {raw.dtype}")
    img = raw.astype(np.float64) / maxval
    if img.ndim == 2:
        img = img[:, :, None]
    elif img.shape[2] == 3:
        img = img[:, :, ::-1]  # BGR -> RGB
    elif img.shape[2] == 4:
        img = img[:, :, 2::-1]
    return np.ascontiguousarray(img)


def save_image(img: np.ndarray, path, depth: int = 8) -> None:
    """Write a [0, 1] image as 8- or 16-bit PNG (round half away from zero)."""
    if depth not in (8, 16):
        raise InvalidParams(f"depth must be 8 or 16, got {depth}")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    maxval = 255.0 if depth == 8 else 65535.0
    q = np.clip(np.floor(np.clip(img, 0.0, 1.0) * maxval + 0.5), 0, maxval)
    q = q.astype(np.uint8 if depth == 8 else np.uint16)
    if q.shape[2] == 3:
        q = q[:, :, ::-1]
    elif q.shape[2] == 1:
        q = q[:, :, 0]
    ok = cv2.imwrite(str(path), q, [cv2.IMWRITE_PNG_COMPRESSION, 6])
    if not ok:
        raise IoError(f"cannot write {path}")


def _square_dp(mask: np.ndarray) -> np.ndarray:
    m = (np.asarray(mask) != 0).astype(np.int32)
    dp = np.zeros_like(m)
    h, w = m.shape
    for i in range(h):
        for j in range(w):
            if not m[i, j]:
                continue
            if i == 0 or j == 0:
                dp[i, j] = 1
            else:
                dp[i, j] = 1 + min(dp[i - 1, j], dp[i, j - 1], dp[i - 1, j - 1])
    return dp


def largest_valid_square(mask: np.ndarray):
    """Maximal all-ones square as (row, col, size); ties -> smallest (row, col)."""
    if np.count_nonzero(mask) == 0:
        raise EmptyMask("mask has no valid pixels")
    dp = _square_dp(mask)
    size = int(dp.max())
    rows, cols = np.nonzero(dp >= size)
    tops = sorted(zip(rows - size + 1, cols - size + 1))
    r, c = tops[0]
    return int(r), int(c), size


def _crop_positions(dp: np.ndarray, side: int) -> np.ndarray:
    rows, cols = np.nonzero(dp >= side)
    return np.stack([rows - side + 1, cols - side + 1], axis=1)


@dataclass
class TrainSample:
    hr: np.ndarray
    m: Homography  # forward transform, LR frame -> HR frame
    lr: np.ndarray
    lr_crop: np.ndarray
    crop_offset: tuple
    mask: np.ndarray  # validity of the HR grid under the composed transform
    m_composed: Homography  # forward transform, crop coords -> HR frame


def synthesize_pair(hr: np.ndarray, m_inv: Homography, rng, crop_max: int = 24, crop_min: int = 8) -> TrainSample:
    """Warp an HR patch down with M^-1 and cut a fully-valid square crop."""
    hr = np.asarray(hr, dtype=np.float64)
    hr_h, hr_w = hr.shape[:2]
    dw, dh, off = output_bounds(m_inv, hr_w, hr_h)
    adj = fold_offset(m_inv, off)
    lr, lr_mask = warp_bicubic(hr, backward_map(adj), (dw, dh))

    dp = _square_dp(lr_mask)
    best = int(dp.max())
    if best < crop_min:
        raise NoValidSquare(f"largest valid square {best} < {crop_min}")
    side = min(crop_max, best)
    pos = _crop_positions(dp, side)
    r, c = pos[int(rng.integers(len(pos)))]
    lr_crop = lr[r : r + side, c : c + side]

    m_composed = compose(adj.inverse(), translation(float(c), float(r)))
    mask = compute_mask(backward_map(m_composed), (side, side), (hr_w, hr_h))
    if not mask.any():
        # extreme perspective can collapse the crop footprint to a sliver
        # containing no target pixel center; such a pair is untrainable
        raise NoValidSquare("composed transform leaves no valid target pixels")
    return TrainSample(
        hr=hr,
        m=m_inv.inverse(),
        lr=lr,
        lr_crop=lr_crop,
        crop_offset=(int(c), int(r)),
        mask=mask,
        m_composed=m_composed,
    )


def _atomic_write(path, writer) -> None:
    d = os.path.dirname(str(path)) or "."
    ext = os.path.splitext(str(path))[1]
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp" + ext)
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def random_texture(height: int, width: int, rng) -> np.ndarray:
    """Synthetic RGB test texture with structure a resampler can lose.

    Smooth multi-scale background, sharp-edged rotated rectangles at random
    intensities, and oriented sinusoid gratings; edges and near-Nyquist
    detail give a super-resolver something to recover over plain bicubic.
    """
    img = np.zeros((height, width, 3))
    for cell in (8, 16, 32):
        coarse = rng.random(((height + cell - 1) // cell + 1, (width + cell - 1) // cell + 1, 3))
        img += cv2.resize(coarse, (width, height), interpolation=cv2.INTER_CUBIC) / 3.0

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    for _ in range(12):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        phi = rng.uniform(0, math.pi)
        c, s = math.cos(phi), math.sin(phi)
        u = c * (xs - cx) + s * (ys - cy)
        v = -s * (xs - cx) + c * (ys - cy)
        hw, hh = rng.uniform(3, width / 3), rng.uniform(3, height / 3)
        inside = (np.abs(u) < hw) & (np.abs(v) < hh)
        img[inside] = img[inside] * 0.25 + 0.75 * rng.random(3)

    for _ in range(4):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        phi = rng.uniform(0, math.pi)
        u = math.cos(phi) * (xs - cx) + math.sin(phi) * (ys - cy)
        v = -math.sin(phi) * (xs - cx) + math.cos(phi) * (ys - cy)
        patch = (np.abs(u) < rng.uniform(8, width / 3)) & (np.abs(v) < rng.uniform(8, height / 3))
        freq = rng.uniform(0.4, 1.1)
        grating = 0.5 + 0.5 * np.sin(freq * u + rng.uniform(0, 2 * math.pi))
        amp = rng.uniform(0.3, 0.6)
        img[patch] = img[patch] * (1 - amp) + amp * grating[patch, None] * rng.random(3)

    img += 0.01 * rng.standard_normal((height, width, 1))
    img -= img.min()
    peak = img.max()
    return img / peak if peak > 0 else img


_TRANSFORM_RETRIES = 16


def build_split(
    hr_dir,
    out_dir,
    count: int,
    seed: int,
    group: int = 4,
    hr_patch: int = 96,
    crop_max: int = 24,
    crop_min: int = 8,
) -> str:
    """Materialize a split of `count` samples; reproducible from (hr_dir, seed).

    Samples are grouped (default 4) so every group shares the same base
    transform and mini-batches can share a warping matrix during training.
    """
    files = sorted(
        f for f in os.listdir(hr_dir) if f.lower().endswith(".png")
    )
    if count > 0 and not files:
        raise IoError(f"no PNG images in {hr_dir}")
    for sub in ("hr", "lr", "mask", "tf"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    master = np.random.Generator(np.random.PCG64(seed))
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    lines = []
    for k in range(count):
        gidx = k // group
        crop_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1, k])))
        img = load_image(os.path.join(hr_dir, files[int(master.integers(len(files)))]))
        if img.shape[0] < hr_patch or img.shape[1] < hr_patch:
            raise InvalidParams(f"HR image smaller than patch size {hr_patch}")
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        y0 = int(master.integers(img.shape[0] - hr_patch + 1))
        x0 = int(master.integers(img.shape[1] - hr_patch + 1))
        hr = img[y0 : y0 + hr_patch, x0 : x0 + hr_patch, :3]

        sample = None
        for retry in range(_TRANSFORM_RETRIES):
            tseed = int(np.random.SeedSequence([seed, 2, gidx, retry]).generate_state(1)[0])
            _, m = sample_transform(tseed, hr_patch, hr_patch)
            try:
                sample = synthesize_pair(hr, m.inverse(), crop_rng, crop_max, crop_min)
                break
            except NoValidSquare:
                continue
        if sample is None:
            raise NoValidSquare(f"sample {k}: no usable transform after {_TRANSFORM_RETRIES} tries")

        name = f"{k:05d}.png"
        _atomic_write(os.path.join(out_dir, "hr", name), lambda p, s=sample: save_image(s.hr, p, 16))
        _atomic_write(os.path.join(out_dir, "lr", name), lambda p, s=sample: save_image(s.lr_crop, p, 16))
        _atomic_write(os.path.join(out_dir, "mask", name), lambda p, s=sample: save_image(s.mask.astype(np.float64), p, 8))
        _atomic_write(
            os.path.join(out_dir, "tf", f"{k:05d}.json"),
            lambda p, s=sample: save_transform(p, s.m_composed),
        )
        lines.append(
            json.dumps(
                {
                    "index": k,
                    "hr": f"hr/{name}",
                    "lr": f"lr/{name}",
                    "mask": f"mask/{name}",
                    "tf": f"tf/{k:05d}.json",
                    "crop": list(sample.crop_offset),
                    "group": gidx,
                    "seed": seed,
                    "base_matrix": sample.m.m.tolist(),
                }
            )
        )

    def write_manifest(p):
        with open(p, "w", encoding="utf-8") as f:
            for line in lines:
                f.write(line + "\n")

    _atomic_write(manifest_path, write_manifest)
    return manifest_path


def load_split(manifest_path):
    """Read a manifest back as a list of record dicts with absolute paths."""
    root = os.path.dirname(os.path.abspath(manifest_path))
    records = []
    with open(manifest_path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            for key in ("hr", "lr", "mask", "tf"):
                rec[key] = os.path.join(root, rec[key])
            records.append(rec)
    return records
