"""Per-pixel elliptical resampling coordinate system.

The local Jacobian of the backward map sends the unit circle around a target
pixel to an ellipse on the source image. Its principal axes define an
adaptive basis in which resampling offsets are expressed and rescaled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularJacobian
from .xform import Jacobian2

_DET_EPS = 1e-12
_CIRCLE_EPS = 1e-10


@dataclass(frozen=True)
class AdaptiveBasis:
    """Ellipse axes (A >= B), rotation angle and the rotated basis vectors."""

    A: float
    B: float
    omega: float
    e_x: np.ndarray
    e_y: np.ndarray


def _closed_form(ux, uy, vx, vy):
    """Closed-form ellipse parameters; scalar or array inputs.

    Writing num = 2(ux uy + vx vy), den = ux^2 + vx^2 - uy^2 - vy^2 and
    h = hypot(num, den), the identity h^2 = ||J||_F^4 - 4 det(J)^2 turns the
    supplementary equations into A^2 = 2 D^2 / (F^2 - h), B^2 = 2 D^2 / (F^2 + h)
    with 2*omega = atan2(num, den), which is branch-safe.
    """
    det = ux * vy - vx * uy
    frob2 = ux * ux + uy * uy + vx * vx + vy * vy
    num = 2.0 * (ux * uy + vx * vy)
    den = ux * ux + vx * vx - uy * uy - vy * vy
    h = np.hypot(num, den)
    circle = h <= _CIRCLE_EPS * frob2
    omega = np.where(circle, 0.0, 0.5 * np.arctan2(num, den))
    d2 = det * det
    # the circle branch: A = B = ||u|| (equal to both singular values there)
    a = np.where(circle, np.hypot(ux, uy), np.sqrt(2.0 * d2 / np.maximum(frob2 - h, _DET_EPS)))
    b = np.where(circle, np.hypot(ux, uy), np.sqrt(2.0 * d2 / (frob2 + h)))
    return a, b, omega


def principal_axes(j: Jacobian2) -> AdaptiveBasis:
    """Ellipse {J c : |c| = 1} as axis lengths, angle and basis vectors."""
    if abs(j.det()) <= _DET_EPS:
        raise SingularJacobian(f"|det J| = {abs(j.det()):g}")
    a, b, omega = _closed_form(j.u[0], j.u[1], j.v[0], j.v[1])
    a, b, omega = float(a), float(b), float(omega)
    c, s = math.cos(omega), math.sin(omega)
    return AdaptiveBasis(
        A=a,
        B=b,
        omega=omega,
        e_x=np.array([a * c, a * s]),
        e_y=np.array([-b * s, b * c]),
    )


def adapt_offset(o, basis: AdaptiveBasis) -> np.ndarray:
    """Express an offset in the ellipse basis; boundary points become unit."""
    o = np.asarray(o, dtype=np.float64)
    c, s = math.cos(basis.omega), math.sin(basis.omega)
    rx = c * o[0] + s * o[1]
    ry = -s * o[0] + c * o[1]
    return np.array([rx / basis.A, ry / basis.B])


def rescale_offset(o, basis: AdaptiveBasis) -> np.ndarray:
    """Shrink/stretch an offset by the norm ratio of its adapted version."""
    o = np.asarray(o, dtype=np.float64)
    n = float(np.hypot(o[0], o[1]))
    if n == 0.0:
        return np.zeros(2)
    adapted = adapt_offset(o, basis)
    return (float(np.hypot(adapted[0], adapted[1])) / n) * o


def rescale_offsets_field(ox, oy, ux, uy, vx, vy):
    """Vectorized rescale_offset for arrays of offsets against a Jacobian field.

    ox, oy: (..., k) offsets per pixel; ux..vy: (...,) Jacobian components.
    Returns rescaled (ox', oy') with the same shape as ox.
    """
    a, b, omega = _closed_form(ux, uy, vx, vy)
    c = np.cos(omega)[..., None]
    s = np.sin(omega)[..., None]
    a = a[..., None]
    b = b[..., None]
    rx = (c * ox + s * oy) / a
    ry = (-s * ox + c * oy) / b
    n = np.hypot(ox, oy)
    adapted = np.hypot(rx, ry)
    ratio = np.where(n > 0.0, adapted / np.where(n > 0.0, n, 1.0), 0.0)
    return ratio * ox, ratio * oy
