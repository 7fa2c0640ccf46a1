"""Signed distance scenes with an attached reflectance (textel) field.

Geometry objects share a small protocol used by the renderer and the
optimiser::

    eval(x)                 -> (N,) signed distance
    gradient(x)             -> (N, 3) spatial gradient
    params() / with_params  -> flat optimisable vector, immutable update
    param_vjp(x, w)         -> (P,)  sum_i w_i * d sdf(x_i) / dp
    gradient_param_vjp(x, W)-> (P,)  sum_i W_i . d grad(x_i) / dp

Analytic primitives fall back on central differences of their closed forms
for the parameter products; the sphere and the grid provide exact ones.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .brdf import N_PARAMS, TextelParams

DEGENERATE_GRAD = 1e-8
_FD_STEP = 1e-6


class DegenerateGradientError(ValueError):
    """Raised when a normal is requested where the SDF gradient vanishes."""


def _pts(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1, 3)


def _safe_norm(v, axis=-1, keepdims=False):
    return np.sqrt(np.sum(v * v, axis=axis, keepdims=keepdims))


def _unit(v):
    n = _safe_norm(v, keepdims=True)
    return v / np.maximum(n, 1e-300)


@dataclass(frozen=True)
class ShapeParams:
    """Flat view of a geometry's optimisable degrees of freedom."""

    names: tuple[str, ...]
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        n = len(self.names)
        for arr in (self.values, self.lower, self.upper):
            if np.shape(arr) != (n,):
                raise ValueError("ShapeParams arrays must match the name list")

    def project(self, values=None) -> np.ndarray:
        v = self.values if values is None else np.asarray(values, dtype=np.float64)
        return np.clip(v, self.lower, self.upper)

    def index(self, name: str) -> int:
        return self.names.index(name)


class Geometry:
    """Base class for distance fields; subclasses set ``param_names``."""

    param_names: tuple[str, ...] = ()

    def eval(self, x) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> np.ndarray:
        return np.zeros(0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        n = len(self.param_names)
        return np.full(n, -np.inf), np.full(n, np.inf)

    def with_params(self, p) -> "Geometry":
        raise NotImplementedError

    def shape_params(self) -> ShapeParams:
        lo, hi = self.bounds()
        return ShapeParams(tuple(self.param_names), self.params().copy(), lo, hi)

    def param_vjp(self, x, w) -> np.ndarray:
        x = _pts(x)
        w = np.asarray(w, dtype=np.float64).reshape(-1)
        return self._fd_columns(lambda g: g.eval(x) @ w)

    def gradient_param_vjp(self, x, W) -> np.ndarray:
        x = _pts(x)
        W = np.asarray(W, dtype=np.float64).reshape(-1, 3)
        return self._fd_columns(lambda g: np.sum(g.gradient(x) * W))

    def _fd_columns(self, fn) -> np.ndarray:
        p = self.params()
        out = np.zeros(p.size)
        for k in range(p.size):
            h = _FD_STEP * max(1.0, abs(p[k]))
            pp = p.copy()
            pm = p.copy()
            pp[k] += h
            pm[k] -= h
            out[k] = (fn(self.with_params(pp)) - fn(self.with_params(pm))) / (2.0 * h)
        return out

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


# --- analytic primitives ----------------------------------------------------


@dataclass(frozen=True)
class Sphere(Geometry):
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0
    param_names = ("center_x", "center_y", "center_z", "radius")

    def eval(self, x):
        return _safe_norm(_pts(x) - np.asarray(self.center)) - self.radius

    def gradient(self, x):
        return _unit(_pts(x) - np.asarray(self.center))

    def params(self):
        return np.array([*self.center, self.radius], dtype=np.float64)

    def bounds(self):
        return np.array([-np.inf] * 3 + [1e-4]), np.full(4, np.inf)

    def with_params(self, p):
        p = np.asarray(p, dtype=np.float64)
        return Sphere(tuple(p[:3].tolist()), float(p[3]))

    def param_vjp(self, x, w):
        n = self.gradient(x)
        w = np.asarray(w, dtype=np.float64).reshape(-1)
        return np.concatenate([-(w[:, None] * n).sum(0), [-w.sum()]])

    def gradient_param_vjp(self, x, W):
        d = _pts(x) - np.asarray(self.center)
        rho = np.maximum(_safe_norm(d, keepdims=True), 1e-300)
        n = d / rho
        W = np.asarray(W, dtype=np.float64).reshape(-1, 3)
        # d n / d center = -(I - n n^T) / rho
        proj = W - n * np.sum(W * n, axis=1, keepdims=True)
        return np.concatenate([-(proj / rho).sum(0), [0.0]])

    def bounding_box(self):
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def to_dict(self):
        return {"type": "sphere", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Box(Geometry):
    center: tuple = (0.0, 0.0, 0.0)
    half_extents: tuple = (0.5, 0.5, 0.5)
    param_names = ("center_x", "center_y", "center_z", "half_x", "half_y", "half_z")

    def eval(self, x):
        q = np.abs(_pts(x) - np.asarray(self.center)) - np.asarray(self.half_extents)
        outside = _safe_norm(np.maximum(q, 0.0))
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def gradient(self, x):
        p = _pts(x) - np.asarray(self.center)
        q = np.abs(p) - np.asarray(self.half_extents)
        sgn = np.where(p >= 0.0, 1.0, -1.0)
        out = np.maximum(q, 0.0)
        g_out = _unit(out)
        axis = np.argmax(q, axis=1)
        g_in = np.zeros_like(p)
        g_in[np.arange(len(p)), axis] = 1.0
        g = np.where((q.max(axis=1) > 0.0)[:, None], g_out, g_in)
        return g * sgn

    def params(self):
        return np.array([*self.center, *self.half_extents], dtype=np.float64)

    def bounds(self):
        return np.array([-np.inf] * 3 + [1e-4] * 3), np.full(6, np.inf)

    def with_params(self, p):
        p = np.asarray(p, dtype=np.float64)
        return Box(tuple(p[:3].tolist()), tuple(p[3:6].tolist()))

    def bounding_box(self):
        c = np.asarray(self.center)
        h = np.asarray(self.half_extents)
        return c - h, c + h

    def to_dict(self):
        return {"type": "box", "center": list(self.center), "half_extents": list(self.half_extents)}


@dataclass(frozen=True)
class Torus(Geometry):
    """Torus around the local Y axis."""

    center: tuple = (0.0, 0.0, 0.0)
    major_radius: float = 0.5
    minor_radius: float = 0.2
    param_names = ("center_x", "center_y", "center_z", "major_radius", "minor_radius")

    def _q(self, x):
        p = _pts(x) - np.asarray(self.center)
        rho = np.hypot(p[:, 0], p[:, 2])
        return p, rho, np.stack([rho - self.major_radius, p[:, 1]], axis=1)

    def eval(self, x):
        _, _, q = self._q(x)
        return _safe_norm(q) - self.minor_radius

    def gradient(self, x):
        p, rho, q = self._q(x)
        g = _unit(q)
        rho = np.maximum(rho, 1e-300)
        return np.stack([g[:, 0] * p[:, 0] / rho, g[:, 1], g[:, 0] * p[:, 2] / rho], axis=1)

    def params(self):
        return np.array([*self.center, self.major_radius, self.minor_radius], dtype=np.float64)

    def bounds(self):
        return np.array([-np.inf] * 3 + [1e-4, 1e-4]), np.full(5, np.inf)

    def with_params(self, p):
        p = np.asarray(p, dtype=np.float64)
        return Torus(tuple(p[:3].tolist()), float(p[3]), float(p[4]))

    def bounding_box(self):
        c = np.asarray(self.center)
        e = np.array([self.major_radius + self.minor_radius, self.minor_radius,
                      self.major_radius + self.minor_radius])
        return c - e, c + e

    def to_dict(self):
        return {"type": "torus", "center": list(self.center),
                "major_radius": self.major_radius, "minor_radius": self.minor_radius}


@dataclass(frozen=True)
class Capsule(Geometry):
    a: tuple = (0.0, -0.5, 0.0)
    b: tuple = (0.0, 0.5, 0.0)
    radius: float = 0.2
    param_names = ("a_x", "a_y", "a_z", "b_x", "b_y", "b_z", "radius")

    def _d(self, x):
        a = np.asarray(self.a)
        ba = np.asarray(self.b) - a
        pa = _pts(x) - a
        h = np.clip(pa @ ba / max(float(ba @ ba), 1e-300), 0.0, 1.0)
        return pa - h[:, None] * ba

    def eval(self, x):
        return _safe_norm(self._d(x)) - self.radius

    def gradient(self, x):
        return _unit(self._d(x))

    def params(self):
        return np.array([*self.a, *self.b, self.radius], dtype=np.float64)

    def bounds(self):
        return np.array([-np.inf] * 6 + [1e-4]), np.full(7, np.inf)

    def with_params(self, p):
        p = np.asarray(p, dtype=np.float64)
        return Capsule(tuple(p[:3].tolist()), tuple(p[3:6].tolist()), float(p[6]))

    def bounding_box(self):
        a = np.asarray(self.a)
        b = np.asarray(self.b)
        return np.minimum(a, b) - self.radius, np.maximum(a, b) + self.radius

    def to_dict(self):
        return {"type": "capsule", "a": list(self.a), "b": list(self.b), "radius": self.radius}


@dataclass(frozen=True)
class Scaled(Geometry):
    """``factor * sdf`` of another field; not a distance field unless factor is 1."""

    inner: Geometry
    factor: float = 1.0

    @property
    def param_names(self):
        return tuple(self.inner.param_names)

    def eval(self, x):
        return self.factor * self.inner.eval(x)

    def gradient(self, x):
        return self.factor * self.inner.gradient(x)

    def params(self):
        return self.inner.params()

    def bounds(self):
        return self.inner.bounds()

    def with_params(self, p):
        return Scaled(self.inner.with_params(p), self.factor)

    def bounding_box(self):
        return self.inner.bounding_box()

    def to_dict(self):
        return {"type": "scaled", "factor": self.factor, "inner": self.inner.to_dict()}


def smooth_min(a, b, k):
    """Polynomial smooth minimum; returns (value, weight on ``a``).

    ``d value / d a`` equals the returned weight and ``d / d b`` its
    complement; ``k <= 0`` degenerates to the hard minimum.
    """
    if k <= 0.0:
        h = (a <= b).astype(np.float64)
        return np.minimum(a, b), h
    h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
    return b * (1.0 - h) + a * h - k * h * (1.0 - h), h


@dataclass(frozen=True)
class Composite(Geometry):
    """Left fold of :func:`smooth_min` over primitives."""

    primitives: tuple
    smoothness: float = 0.0

    @property
    def param_names(self):
        names = []
        for i, p in enumerate(self.primitives):
            names += [f"p{i}.{n}" for n in p.param_names]
        return tuple(names + ["smoothness"])

    def _fold(self, x):
        x = _pts(x)
        d = self.primitives[0].eval(x)
        g = self.primitives[0].gradient(x)
        for prim in self.primitives[1:]:
            di = prim.eval(x)
            gi = prim.gradient(x)
            d, h = smooth_min(d, di, self.smoothness)
            g = h[:, None] * g + (1.0 - h)[:, None] * gi
        return d, g

    def eval(self, x):
        return self._fold(x)[0]

    def gradient(self, x):
        return self._fold(x)[1]

    def nearest_primitive(self, x) -> np.ndarray:
        x = _pts(x)
        return np.argmin(np.stack([p.eval(x) for p in self.primitives], axis=0), axis=0)

    def params(self):
        return np.concatenate([p.params() for p in self.primitives] + [[self.smoothness]])

    def bounds(self):
        los, his = zip(*(p.bounds() for p in self.primitives))
        return np.concatenate(los + ([0.0],)), np.concatenate(his + ([np.inf],))

    def with_params(self, p):
        p = np.asarray(p, dtype=np.float64)
        prims, i = [], 0
        for prim in self.primitives:
            n = len(prim.param_names)
            prims.append(prim.with_params(p[i:i + n]))
            i += n
        return Composite(tuple(prims), float(p[i]))

    def bounding_box(self):
        los, his = zip(*(p.bounding_box() for p in self.primitives))
        return np.min(los, axis=0), np.max(his, axis=0)

    def to_dict(self):
        return {"type": "composite", "smoothness": self.smoothness,
                "primitives": [p.to_dict() for p in self.primitives]}


# --- trilinear grids ----------------------------------------------------------


def _trilinear_setup(x, origin, spacing, dims):
    """Cell indices and weights for trilinear interpolation, clamped to the grid."""
    u = (_pts(x) - origin) / spacing
    hi = np.asarray(dims) - 1
    u = np.clip(u, 0.0, hi)
    i0 = np.minimum(np.floor(u).astype(np.int64), np.maximum(hi - 1, 0))
    f = u - i0
    return i0, f


def _corner_iter(i0, f):
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                yield i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz, wx * wy * wz


def trilinear(values, x, origin, spacing):
    """Interpolate a ``(nx, ny, nz, ...)`` array at world points."""
    dims = values.shape[:3]
    i0, f = _trilinear_setup(x, origin, spacing, dims)
    out = 0.0
    for ix, iy, iz, w in _corner_iter(i0, f):
        v = values[ix, iy, iz]
        out = out + (w.reshape(w.shape + (1,) * (v.ndim - 1)) * v)
    return out


def trilinear_adjoint(cot, x, origin, spacing, dims):
    """Transpose of :func:`trilinear`: scatter cotangents onto grid nodes."""
    cot = np.asarray(cot, dtype=np.float64)
    tail = cot.shape[1:]
    out = np.zeros(tuple(dims) + tail)
    i0, f = _trilinear_setup(x, origin, spacing, dims)
    for ix, iy, iz, w in _corner_iter(i0, f):
        np.add.at(out, (ix, iy, iz), w.reshape(w.shape + (1,) * len(tail)) * cot)
    return out


def _central_diff_adjoint(G, axis):
    """Adjoint of ``np.gradient(v, axis=axis)`` with unit spacing, first-order edges."""
    G = np.moveaxis(G, axis, 0)
    n = G.shape[0]
    V = np.zeros_like(G)
    if n == 1:
        return np.moveaxis(V, 0, axis)
    V[1] += G[0]
    V[0] -= G[0]
    V[n - 1] += G[n - 1]
    V[n - 2] -= G[n - 1]
    if n > 2:
        V[2:] += 0.5 * G[1:n - 1]
        V[:n - 2] -= 0.5 * G[1:n - 1]
    return np.moveaxis(V, 0, axis)


class GridSdf(Geometry):
    """Distance samples on a regular grid.

    Values are interpolated trilinearly; gradients are node-wise central
    differences, also interpolated trilinearly.  Every grid value is a
    free parameter.
    """

    def __init__(self, values, origin, spacing):
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise ValueError("grid values must be a 3D array with at least 2 nodes per axis")
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.spacing = float(spacing)
        self._grad = None

    @property
    def dims(self):
        return self.values.shape

    @property
    def param_names(self):
        return tuple(f"cell{i}" for i in range(self.values.size))

    @classmethod
    def from_geometry(cls, geom: Geometry, center, half_width, resolution=128):
        """Sample another field on a ``resolution**3`` grid over a cube."""
        center = np.asarray(center, dtype=np.float64)
        lin = np.linspace(-half_width, half_width, resolution)
        xs = np.stack(np.meshgrid(lin, lin, lin, indexing="ij"), axis=-1).reshape(-1, 3) + center
        step = 1 << 18
        vals = np.concatenate([geom.eval(xs[i:i + step]) for i in range(0, len(xs), step)])
        spacing = 2.0 * half_width / (resolution - 1)
        return cls(vals.reshape((resolution,) * 3), center - half_width, spacing)

    def node_gradient(self):
        if self._grad is None:
            self._grad = np.stack(np.gradient(self.values, self.spacing), axis=-1)
        return self._grad

    def eval(self, x):
        return trilinear(self.values, x, self.origin, self.spacing)

    def gradient(self, x):
        return trilinear(self.node_gradient(), x, self.origin, self.spacing)

    def params(self):
        return self.values.reshape(-1).copy()

    def bounds(self):
        n = self.values.size
        return np.full(n, -np.inf), np.full(n, np.inf)

    def with_params(self, p):
        return GridSdf(np.asarray(p, dtype=np.float64).reshape(self.dims), self.origin, self.spacing)

    def param_vjp(self, x, w):
        w = np.asarray(w, dtype=np.float64).reshape(-1)
        return trilinear_adjoint(w, x, self.origin, self.spacing, self.dims).reshape(-1)

    def gradient_param_vjp(self, x, W):
        W = np.asarray(W, dtype=np.float64).reshape(-1, 3)
        G = trilinear_adjoint(W, x, self.origin, self.spacing, self.dims)
        out = np.zeros(self.dims)
        for axis in range(3):
            out += _central_diff_adjoint(G[..., axis], axis)
        return (out / self.spacing).reshape(-1)

    def bounding_box(self):
        return self.origin, self.origin + self.spacing * (np.asarray(self.dims) - 1)

    def to_dict(self):
        return {"type": "grid", "dims": list(self.dims), "origin": self.origin.tolist(),
                "spacing": self.spacing}


# --- textel fields ------------------------------------------------------------


class TextelField:
    param_names: tuple[str, ...] = ()

    def sample(self, x, geometry) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> np.ndarray:
        raise NotImplementedError

    def with_params(self, p) -> "TextelField":
        raise NotImplementedError

    def vjp(self, x, geometry, cot) -> np.ndarray:
        """``sum_i cot_i . d theta(x_i) / dp`` for the flat parameter vector."""
        raise NotImplementedError


class ConstantTextel(TextelField):
    def __init__(self, theta):
        self.theta = _theta_array(theta)

    @property
    def param_names(self):
        from .brdf import PARAM_NAMES
        return PARAM_NAMES

    def sample(self, x, geometry=None):
        return np.broadcast_to(np.clip(self.theta, 0.0, 1.0), (len(_pts(x)), N_PARAMS)).copy()

    def params(self):
        return self.theta.copy()

    def with_params(self, p):
        return ConstantTextel(np.asarray(p, dtype=np.float64))

    def vjp(self, x, geometry, cot):
        inside = (self.theta >= 0.0) & (self.theta <= 1.0)
        return np.asarray(cot).reshape(-1, N_PARAMS).sum(0) * inside

    def to_dict(self):
        return {"type": "constant", "theta": TextelParams.from_array(np.clip(self.theta, 0, 1)).to_dict()}


class PerPrimitiveTextel(TextelField):
    """One textel per primitive of a composite; nearest-region assignment."""

    def __init__(self, thetas):
        self.thetas = np.stack([_theta_array(t) for t in thetas])

    @property
    def param_names(self):
        from .brdf import PARAM_NAMES
        return tuple(f"p{i}.{n}" for i in range(len(self.thetas)) for n in PARAM_NAMES)

    def _region(self, x, geometry):
        if isinstance(geometry, Composite):
            idx = geometry.nearest_primitive(x)
            if idx.max(initial=0) >= len(self.thetas):
                raise ValueError("fewer textels than primitives")
            return idx
        return np.zeros(len(_pts(x)), dtype=np.int64)

    def sample(self, x, geometry):
        return np.clip(self.thetas[self._region(x, geometry)], 0.0, 1.0)

    def params(self):
        return self.thetas.reshape(-1).copy()

    def with_params(self, p):
        return PerPrimitiveTextel(np.asarray(p, dtype=np.float64).reshape(-1, N_PARAMS))

    def vjp(self, x, geometry, cot):
        out = np.zeros_like(self.thetas)
        np.add.at(out, self._region(x, geometry), np.asarray(cot).reshape(-1, N_PARAMS))
        inside = (self.thetas >= 0.0) & (self.thetas <= 1.0)
        return (out * inside).reshape(-1)

    def to_dict(self):
        return {"type": "per_primitive",
                "thetas": [TextelParams.from_array(np.clip(t, 0, 1)).to_dict() for t in self.thetas]}


class GridTextel(TextelField):
    def __init__(self, values, origin, spacing):
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.ndim != 4 or self.values.shape[-1] != N_PARAMS:
            raise ValueError("textel grid must be (nx, ny, nz, 9)")
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.spacing = float(spacing)

    @property
    def param_names(self):
        return tuple(f"cell{i}" for i in range(self.values.size))

    def sample(self, x, geometry=None):
        return np.clip(trilinear(self.values, x, self.origin, self.spacing), 0.0, 1.0)

    def params(self):
        return self.values.reshape(-1).copy()

    def with_params(self, p):
        return GridTextel(np.asarray(p, dtype=np.float64).reshape(self.values.shape), self.origin, self.spacing)

    def vjp(self, x, geometry, cot):
        raw = trilinear(self.values, x, self.origin, self.spacing)
        cot = np.asarray(cot).reshape(-1, N_PARAMS) * ((raw >= 0.0) & (raw <= 1.0))
        return trilinear_adjoint(cot, x, self.origin, self.spacing, self.values.shape[:3]).reshape(-1)

    def to_dict(self):
        return {"type": "grid", "dims": list(self.values.shape[:3]),
                "origin": self.origin.tolist(), "spacing": self.spacing}


def _theta_array(t) -> np.ndarray:
    if isinstance(t, TextelParams):
        return t.as_array()
    if isinstance(t, dict):
        return TextelParams.from_dict(t).as_array()
    a = np.asarray(t, dtype=np.float64).reshape(N_PARAMS)
    return a


# --- the scene ------------------------------------------------------------------


@dataclass
class SdfScene:
    geometry: Geometry
    texel_field: TextelField = field(default_factory=lambda: ConstantTextel(TextelParams()))
    roi_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    roi_radius: float = 1.0

    def __post_init__(self):
        self.roi_center = np.asarray(self.roi_center, dtype=np.float64).reshape(3)
        if not self.roi_radius > 0:
            raise ValueError("ROI radius must be positive")

    def outside_roi(self, x) -> np.ndarray:
        d = _safe_norm(_pts(x) - self.roi_center)
        return d > self.roi_radius * (1.0 + 1e-9)

    def sdf(self, x, return_flags: bool = False):
        """Signed distance; points outside the ROI get their distance to the ROI ball."""
        x = _pts(x)
        d = self.geometry.eval(x)
        out = self.outside_roi(x)
        if np.any(out):
            d = np.where(out, _safe_norm(x - self.roi_center) - self.roi_radius, d)
        return (d, out) if return_flags else d

    def gradient(self, x) -> np.ndarray:
        return self.geometry.gradient(_pts(x))

    def normals(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Unit normals and a boolean mask of degenerate-gradient points."""
        g = self.gradient(x)
        norm = _safe_norm(g, keepdims=True)
        bad = norm[:, 0] <= DEGENERATE_GRAD
        n = g / np.where(bad[:, None], 1.0, norm)
        n[bad] = 0.0
        return n, bad

    def normal(self, x) -> np.ndarray:
        n, bad = self.normals(x)
        if np.any(bad):
            raise DegenerateGradientError(f"{int(bad.sum())} point(s) with vanishing SDF gradient")
        return n

    def eikonal_residual(self, points) -> float:
        g = self.gradient(points)
        return float(np.mean((1.0 - _safe_norm(g)) ** 2))

    def sample_texel(self, x) -> np.ndarray:
        return self.texel_field.sample(_pts(x), self.geometry)

    def shape_params(self) -> ShapeParams:
        return self.geometry.shape_params()

    def with_geometry(self, geometry) -> "SdfScene":
        return SdfScene(geometry, self.texel_field, self.roi_center, self.roi_radius)

    def with_texel(self, texel) -> "SdfScene":
        return SdfScene(self.geometry, texel, self.roi_center, self.roi_radius)

    def uniform_roi_points(self, n, rng) -> np.ndarray:
        """Uniform samples inside the ROI ball."""
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = self.roi_radius * rng.uniform(size=(n, 1)) ** (1.0 / 3.0)
        return self.roi_center + d * r

    def object_length(self) -> float:
        lo, hi = self.geometry.bounding_box()
        return float(np.linalg.norm(np.asarray(hi) - np.asarray(lo)))


# Functional aliases mirroring the operation names used across the package.

def sdf(scene: SdfScene, x):
    return scene.sdf(x)


def normal(scene: SdfScene, x):
    return scene.normal(x)


def eikonal_residual(scene: SdfScene, points):
    return scene.eikonal_residual(points)


def sample_texel(scene: SdfScene, x):
    return scene.sample_texel(x)


# --- serialisation ----------------------------------------------------------------


def _primitive_from_dict(d: dict) -> Geometry:
    kind = d["type"]
    if kind == "sphere":
        return Sphere(tuple(map(float, d.get("center", (0, 0, 0)))), float(d["radius"]))
    if kind == "box":
        return Box(tuple(map(float, d.get("center", (0, 0, 0)))), tuple(map(float, d["half_extents"])))
    if kind == "torus":
        return Torus(tuple(map(float, d.get("center", (0, 0, 0)))), float(d["major_radius"]),
                     float(d["minor_radius"]))
    if kind == "capsule":
        return Capsule(tuple(map(float, d["a"])), tuple(map(float, d["b"])), float(d["radius"]))
    if kind == "scaled":
        return Scaled(_primitive_from_dict(d["inner"]), float(d["factor"]))
    if kind == "composite":
        return Composite(tuple(_primitive_from_dict(p) for p in d["primitives"]),
                         float(d.get("smoothness", 0.0)))
    raise ValueError(f"unknown geometry type {kind!r}")


def write_grid(path, values, origin, spacing) -> None:
    """Raw little-endian float32 volume plus ``<path>.json`` header."""
    path = Path(path)
    values = np.asarray(values)
    np.ascontiguousarray(values, dtype="<f4").tofile(path)
    header = {"dims": list(values.shape[:3]), "channels": int(values.shape[3]) if values.ndim == 4 else 1,
              "origin": [float(v) for v in np.asarray(origin).reshape(3)], "spacing": float(spacing),
              "dtype": "<f4", "order": "C"}
    path.with_name(path.name + ".json").write_text(json.dumps(header, indent=2) + "\n")


def read_grid(path):
    path = Path(path)
    header = json.loads(path.with_name(path.name + ".json").read_text())
    raw = np.fromfile(path, dtype="<f4").astype(np.float64)
    shape = tuple(header["dims"]) + ((header["channels"],) if header.get("channels", 1) > 1 else ())
    if raw.size != math.prod(shape):
        raise ValueError(f"grid file {path} has {raw.size} values, header expects {math.prod(shape)}")
    return raw.reshape(shape), np.asarray(header["origin"]), float(header["spacing"])


def scene_from_dict(d: dict, base_dir=".") -> SdfScene:
    base = Path(base_dir)
    g = d["geometry"]
    if g["type"] == "grid":
        vals, origin, spacing = read_grid(base / g["path"])
        geometry = GridSdf(vals, origin, spacing)
    else:
        geometry = _primitive_from_dict(g)
    t = d.get("texel", {"type": "constant", "theta": {}})
    if t["type"] == "constant":
        texel = ConstantTextel(TextelParams.from_dict(t.get("theta", {})))
    elif t["type"] == "per_primitive":
        texel = PerPrimitiveTextel([TextelParams.from_dict(x) for x in t["thetas"]])
    elif t["type"] == "grid":
        vals, origin, spacing = read_grid(base / t["path"])
        texel = GridTextel(vals, origin, spacing)
    else:
        raise ValueError(f"unknown texel field type {t['type']!r}")
    roi = d.get("roi", {})
    return SdfScene(geometry, texel, np.asarray(roi.get("center", (0, 0, 0)), dtype=np.float64),
                    float(roi.get("radius", 1.0)))


def load_scene(path) -> SdfScene:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read scene file {path}: {exc}") from exc
    return scene_from_dict(d, path.parent)


def scene_to_dict(scene: SdfScene, base_dir=None, stem="scene") -> dict:
    """Serialise a scene; grid payloads are written next to ``base_dir``."""
    geom = scene.geometry
    if isinstance(geom, GridSdf):
        if base_dir is None:
            raise ValueError("grid geometry needs a directory for its volume file")
        name = f"{stem}_sdf.raw"
        write_grid(Path(base_dir) / name, geom.values, geom.origin, geom.spacing)
        gd = {"type": "grid", "path": name}
    else:
        gd = geom.to_dict()
    tex = scene.texel_field
    if isinstance(tex, GridTextel):
        if base_dir is None:
            raise ValueError("grid textel field needs a directory for its volume file")
        name = f"{stem}_textel.raw"
        write_grid(Path(base_dir) / name, tex.values, tex.origin, tex.spacing)
        td = {"type": "grid", "path": name}
    else:
        td = tex.to_dict()
    return {"roi": {"center": scene.roi_center.tolist(), "radius": scene.roi_radius},
            "geometry": gd, "texel": td}


def save_scene(scene: SdfScene, path) -> None:
    path = Path(path)
    d = scene_to_dict(scene, path.parent, path.stem)
    path.write_text(json.dumps(d, indent=2) + "\n")
