"""Projective and functional image transforms.

Conventions: pixel centers sit on integer coordinates, origin at the
top-left pixel center, so a W x H image covers [-0.5, W-0.5] x [-0.5, H-0.5].
Homography matrices are row-major and act on column vectors (x, y, 1)^T in
the forward (source -> target) direction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegeneratePoint,
    DegenerateTransform,
    InvalidParams,
    InvalidScale,
    ResampleRejected,
    SingularJacobian,
)

_DET_EPS = 1e-12
_W_EPS = 1e-12


def _normalized(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise DegenerateTransform(f"expected 3x3 matrix, got {m.shape}")
    if abs(m[2, 2]) > _DET_EPS:
        m = m / m[2, 2]
    return m


@dataclass(frozen=True)
class Homography:
    """3x3 invertible projective transform with a cached inverse."""

    m: np.ndarray
    m_inv: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        m = _normalized(self.m)
        det = np.linalg.det(m)
        if abs(det) <= _DET_EPS:
            raise DegenerateTransform(f"matrix is singular (det={det:g})")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "m_inv", _normalized(np.linalg.inv(m)))

    def inverse(self) -> "Homography":
        return Homography(self.m_inv)

    def __eq__(self, other):
        return isinstance(other, Homography) and np.array_equal(self.m, other.m)


def identity() -> Homography:
    return Homography(np.eye(3))


def scale_matrix(s_x: float, s_y: float) -> Homography:
    """Axis-aligned scaling with the half-pixel alignment translation."""
    if not (s_x > 0 and s_y > 0):
        raise InvalidScale(f"scale factors must be positive, got ({s_x}, {s_y})")
    m = np.array(
        [
            [s_x, 0.0, 0.5 * (s_x - 1.0)],
            [0.0, s_y, 0.5 * (s_y - 1.0)],
            [0.0, 0.0, 1.0],
        ]
    )
    return Homography(m)


def translation(t_x: float, t_y: float) -> Homography:
    m = np.eye(3)
    m[0, 2] = t_x
    m[1, 2] = t_y
    return Homography(m)


def compose(a: Homography, b: Homography) -> Homography:
    """Matrix product a.b, i.e. apply b first, then a."""
    prod = a.m @ b.m
    if abs(np.linalg.det(prod)) <= _DET_EPS:
        raise DegenerateTransform("composition lost invertibility")
    return Homography(prod)


def _project(m: np.ndarray, x, y):
    """Vectorized homogeneous projection; NaN where w' vanishes."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    bad = np.abs(w) < _W_EPS
    w_safe = np.where(bad, 1.0, w)
    xo = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w_safe
    yo = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w_safe
    xo = np.where(bad, np.nan, xo)
    yo = np.where(bad, np.nan, yo)
    return xo, yo


def apply_forward(h: Homography, p) -> tuple[float, float]:
    x, y = _project(h.m, p[0], p[1])
    if not (np.isfinite(x) and np.isfinite(y)):
        raise DegeneratePoint(f"point {tuple(p)} maps through w' ~ 0")
    return float(x), float(y)


def apply_backward(h: Homography, p) -> tuple[float, float]:
    x, y = _project(h.m_inv, p[0], p[1])
    if not (np.isfinite(x) and np.isfinite(y)):
        raise DegeneratePoint(f"point {tuple(p)} maps through w' ~ 0")
    return float(x), float(y)


class BackwardMap:
    """Total backward mapping f_M^-1 from target to source coordinates.

    ``kind`` is one of {"homography", "sine", "barrel", "composite"}.
    ``evaluate`` is vectorized and yields NaN where the map is undefined;
    the scalar ``__call__`` raises OutOfDomain instead.
    """

    def __init__(self, kind: str, params: dict, fn):
        self.kind = kind
        self.params = dict(params)
        self._fn = fn

    def evaluate(self, x, y):
        return self._fn(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))

    def __call__(self, x: float, y: float) -> tuple[float, float]:
        from .errors import OutOfDomain

        xs, ys = self.evaluate(x, y)
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise OutOfDomain(f"backward map undefined at ({x}, {y})")
        return float(xs), float(ys)


def backward_map(h: Homography) -> BackwardMap:
    """Backward map of a homography, i.e. f_{M^-1}."""
    m_inv = h.m_inv

    def fn(x, y):
        return _project(m_inv, x, y)

    return BackwardMap("homography", {"matrix": h.m.tolist()}, fn)


def compose_scale(base: BackwardMap, s: float) -> BackwardMap:
    """Backward map of the x s enlarged target: scale forward after base."""
    ms = scale_matrix(s, s).m

    def fn(x, y):
        xs, ys = base.evaluate(x, y)
        return _project(ms, xs, ys)

    if base.kind == "homography" and s == 1.0:
        return base
    return BackwardMap("composite", {"base": base.kind, "scale": s}, fn)


@dataclass(frozen=True)
class Jacobian2:
    """Columns of the 2x2 local derivative of a backward map."""

    u: np.ndarray  # d(x, y)/dx'
    v: np.ndarray  # d(x, y)/dy'

    def det(self) -> float:
        return float(self.u[0] * self.v[1] - self.v[0] * self.u[1])

    def matrix(self) -> np.ndarray:
        return np.column_stack([self.u, self.v])


def jacobian(bmap: BackwardMap, p, eps: float = 0.5) -> Jacobian2:
    """Central-difference linearization of the backward map at p."""
    x, y = float(p[0]), float(p[1])
    xp = bmap(x + eps, y)
    xm = bmap(x - eps, y)
    yp = bmap(x, y + eps)
    ym = bmap(x, y - eps)
    u = np.array([(xp[0] - xm[0]) / (2 * eps), (xp[1] - xm[1]) / (2 * eps)])
    v = np.array([(yp[0] - ym[0]) / (2 * eps), (yp[1] - ym[1]) / (2 * eps)])
    return Jacobian2(u, v)


def jacobian_field(bmap: BackwardMap, xs, ys, eps: float = 0.5):
    """Vectorized jacobian: returns (ux, uy, vx, vy) arrays, NaN when undefined."""
    xp0, xp1 = bmap.evaluate(xs + eps, ys)
    xm0, xm1 = bmap.evaluate(xs - eps, ys)
    yp0, yp1 = bmap.evaluate(xs, ys + eps)
    ym0, ym1 = bmap.evaluate(xs, ys - eps)
    ux = (xp0 - xm0) / (2 * eps)
    uy = (xp1 - xm1) / (2 * eps)
    vx = (yp0 - ym0) / (2 * eps)
    vy = (yp1 - ym1) / (2 * eps)
    return ux, uy, vx, vy


def scale_feature(j: Jacobian2) -> float:
    """Log local magnification, -ln |det J|."""
    d = abs(j.det())
    if d <= _DET_EPS:
        raise SingularJacobian(f"|det J| = {d:g}")
    return -math.log(d)


def output_bounds(h: Homography, src_w: int, src_h: int) -> tuple[int, int, tuple[float, float]]:
    """Forward bounding box of the source rectangle.

    Returns (dst_w, dst_h, offset) where offset is the translation that has
    to be removed from the forward transform so the box starts at -0.5.
    """
    corners = [(-0.5, -0.5), (src_w - 0.5, -0.5), (-0.5, src_h - 0.5), (src_w - 0.5, src_h - 0.5)]
    pts = [apply_forward(h, c) for c in corners]
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    dst_w = int(math.ceil(x1 - x0))
    dst_h = int(math.ceil(y1 - y0))
    offset = (x0 + 0.5, y0 + 0.5)
    return dst_w, dst_h, offset


def fold_offset(h: Homography, offset) -> Homography:
    """Forward transform with the bounding-box offset folded in."""
    return compose(translation(-offset[0], -offset[1]), h)


@dataclass(frozen=True)
class TransformParams:
    """Factor parameters of a random projective transform M^-1 = H R S P."""

    h_x: float
    h_y: float
    theta: float
    s_x: float
    s_y: float
    t_x: float
    t_y: float
    p_x: float
    p_y: float

    def matrix_inv(self) -> np.ndarray:
        sheer = np.array([[1.0, self.h_x, 0.0], [self.h_y, 1.0, 0.0], [0.0, 0.0, 1.0]])
        c, s = math.cos(self.theta), math.sin(self.theta)
        rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
        scale = np.diag([self.s_x, self.s_y, 1.0])
        proj = np.array([[1.0, 0.0, self.t_x], [0.0, 1.0, self.t_y], [self.p_x, self.p_y, 1.0]])
        return sheer @ rot @ scale @ proj


_SAMPLE_RETRIES = 16


def sample_transform(rng_seed: int, hr_w: int, hr_h: int) -> tuple[TransformParams, Homography]:
    """Draw a random training transform; deterministic given the seed.

    Projection coefficients are drawn from U(-0.6, 0.6) and divided by the
    image width/height so warped shapes stay comparable across resolutions.
    The rotation angle is Gaussian via Box-Muller on two uniform draws.
    Near-singular compositions are redrawn a bounded number of times.
    """
    if hr_w <= 0 or hr_h <= 0:
        raise InvalidParams("image dimensions must be positive")
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    sigma_theta = math.radians(15.0)
    for _ in range(_SAMPLE_RETRIES):
        h_x = rng.uniform(-0.25, 0.25)
        h_y = rng.uniform(-0.25, 0.25)
        u1 = rng.uniform(0.0, 1.0)
        u2 = rng.uniform(0.0, 1.0)
        theta = sigma_theta * math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)
        s_x = rng.uniform(0.35, 0.5)
        s_y = rng.uniform(0.35, 0.5)
        t_x = rng.uniform(-0.75 * hr_w, 0.125 * hr_w)
        t_y = rng.uniform(-0.75 * hr_h, 0.125 * hr_h)
        p_x = rng.uniform(-0.6, 0.6) / hr_w
        p_y = rng.uniform(-0.6, 0.6) / hr_h
        params = TransformParams(h_x, h_y, theta, s_x, s_y, t_x, t_y, p_x, p_y)
        m_inv = params.matrix_inv()
        if abs(np.linalg.det(m_inv)) < 1e-9:
            continue
        return params, Homography(m_inv).inverse()
    raise ResampleRejected(f"no invertible transform after {_SAMPLE_RETRIES} draws")


def make_functional(kind: str, params: dict) -> BackwardMap:
    """Functional backward maps beyond homographies.

    sine:   (x, y) = M_s^-1 (x', y' + a sin(2 pi x' / wavelength))
    barrel: radial distortion around ``center`` applied after M_s^-1, with
            normalized radius rho = r / rho_scale.
    All parameters must be finite; scale defaults to 1.
    """
    vals = [v for v in params.values() if isinstance(v, (int, float))]
    if not all(math.isfinite(v) for v in vals):
        raise InvalidParams(f"non-finite parameters: {params}")
    s = float(params.get("scale", 1.0))
    if s <= 0:
        raise InvalidScale(f"scale must be positive, got {s}")
    m_inv = scale_matrix(s, s).m_inv

    if kind == "sine":
        a = float(params.get("amplitude", 0.0))
        lam = float(params.get("wavelength", 32.0))
        if lam == 0:
            raise InvalidParams("wavelength must be nonzero")

        def fn(x, y):
            return _project(m_inv, x, y + a * np.sin(2.0 * np.pi * x / lam))

        return BackwardMap("sine", {**params, "scale": s}, fn)

    if kind == "barrel":
        k1 = float(params.get("k1", 0.0))
        k2 = float(params.get("k2", 0.0))
        cx = float(params.get("center_x", 0.0))
        cy = float(params.get("center_y", 0.0))
        rho_scale = float(params.get("rho_scale", 1.0))
        if rho_scale <= 0:
            raise InvalidParams("rho_scale must be positive")

        def fn(x, y):
            xs, ys = _project(m_inv, x, y)
            dx = xs - cx
            dy = ys - cy
            rho2 = (dx * dx + dy * dy) / (rho_scale * rho_scale)
            g = 1.0 + k1 * rho2 + k2 * rho2 * rho2
            return cx + g * dx, cy + g * dy

        return BackwardMap("barrel", {**params, "scale": s}, fn)

    raise InvalidParams(f"unknown functional kind: {kind!r}")


def save_transform(path, obj) -> None:
    """Write a transform JSON: homography matrix or functional spec."""
    if isinstance(obj, Homography):
        doc = {"matrix": obj.m.tolist()}
    elif isinstance(obj, BackwardMap):
        doc = {"kind": obj.kind, "params": obj.params, "scale": obj.params.get("scale", 1.0)}
    else:
        raise InvalidParams(f"cannot serialize {type(obj)}")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)


def load_transform(path):
    """Read a transform JSON; returns Homography or BackwardMap."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if "matrix" in doc:
        return Homography(np.array(doc["matrix"], dtype=np.float64))
    params = dict(doc.get("params", {}))
    if "scale" in doc:
        params.setdefault("scale", doc["scale"])
    return make_functional(doc["kind"], params)
