"""Masked image quality metrics.

The 2D validity mask is broadcast across channels; its 0-norm counts valid
pixels. Squared/absolute errors are accumulated over all channels of valid
pixels and normalized by pixels x channels, so a full mask reduces to the
standard RGB PSNR / mean L1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMask, ShapeMismatch


def _prep(sr, hr, m):
    sr = np.asarray(sr, dtype=np.float64)
    hr = np.asarray(hr, dtype=np.float64)
    m = np.asarray(m)
    if sr.ndim == 2:
        sr = sr[:, :, None]
    if hr.ndim == 2:
        hr = hr[:, :, None]
    if sr.shape != hr.shape or m.shape != sr.shape[:2]:
        raise ShapeMismatch(f"shapes sr{sr.shape} hr{hr.shape} m{m.shape}")
    valid = int(np.count_nonzero(m))
    if valid == 0:
        raise EmptyMask("mask has no valid pixels")
    return sr, hr, (m != 0), valid


def mpsnr(sr, hr, m) -> float:
    """Masked PSNR in dB over [0, 1] images; +inf when the masked error is 0."""
    sr, hr, mb, valid = _prep(sr, hr, m)
    diff = (sr - hr) * mb[:, :, None]
    sse = float(np.sum(diff * diff))
    if sse == 0.0:
        return math.inf
    return 10.0 * math.log10(valid * sr.shape[2] / sse)


def masked_l1(sr, hr, m) -> float:
    """Mean absolute error over valid pixels (per channel)."""
    sr, hr, mb, valid = _prep(sr, hr, m)
    return float(np.sum(np.abs((sr - hr) * mb[:, :, None]))) / (valid * sr.shape[2])


@dataclass
class EvalReport:
    mpsnr_db: float
    valid_count: int
    l1: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "mpsnr_db": "inf" if math.isinf(self.mpsnr_db) else self.mpsnr_db,
                "valid_count": self.valid_count,
                "l1": self.l1,
            }
        )


def evaluate(sr, hr, m) -> EvalReport:
    _, _, _, valid = _prep(sr, hr, m)
    return EvalReport(mpsnr_db=mpsnr(sr, hr, m), valid_count=valid, l1=masked_l1(sr, hr, m))
