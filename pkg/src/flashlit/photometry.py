"""Image formation with a co-located flashlight, and the training losses.

Observed radiance is ``ambient + s * gamma * flash`` where the flash term is
``rho(n, v, v) * max(n.v, 0) / t**2`` for one unit of radiant intensity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import brdf
from .hdr import HdrImage, _as_rgb

EPS_BCE = 1e-6
DEFAULT_W_EIKONAL = 0.1
DEFAULT_W_MASK = 0.1


@dataclass
class Flashlight:
    gamma: float = 1.0
    s: int = 1

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("flashlight intensity must be positive")
        if self.s not in (0, 1):
            raise ValueError("flashlight switch must be 0 or 1")


def _unit_dirs(d):
    d = np.asarray(d, dtype=np.float64)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def sphere_directions(n_samples: int, seed: int = 0) -> tuple[np.ndarray, float]:
    """Jittered equal-area strata over the sphere.

    Returns ``(dirs, solid_angle_per_sample)``; at least ``n_samples`` dirs.
    """
    nz = max(1, int(round(np.sqrt(n_samples / 2.0))))
    nphi = int(np.ceil(n_samples / nz))
    rng = np.random.default_rng(seed)
    iz, ip = np.meshgrid(np.arange(nz), np.arange(nphi), indexing="ij")
    z = -1.0 + 2.0 * (iz + rng.uniform(size=iz.shape)) / nz
    phi = 2.0 * np.pi * (ip + rng.uniform(size=ip.shape)) / nphi
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    dirs = np.stack([r * np.cos(phi), z, r * np.sin(phi)], axis=-1).reshape(-1, 3)
    return dirs, 4.0 * np.pi / dirs.shape[0]


@dataclass
class EnvironmentMap:
    """Equirectangular radiance map, +Y up; row 0 looks straight up."""

    data: np.ndarray
    n_samples: int = 256
    seed: int = 0
    _dirs: tuple | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError("environment map must be (H, W, 3)")
        if not np.all(np.isfinite(self.data)) or np.any(self.data < 0):
            raise ValueError("environment texels must be finite and non-negative")

    @classmethod
    def constant(cls, value, n_samples=256, seed=0, size=(8, 16)):
        rgb = np.broadcast_to(np.asarray(value, dtype=np.float64), (3,))
        return cls(np.broadcast_to(rgb, size + (3,)).copy(), n_samples, seed)

    @property
    def is_black(self) -> bool:
        return not np.any(self.data > 0)

    def scaled(self, k: float) -> "EnvironmentMap":
        return EnvironmentMap(self.data * k, self.n_samples, self.seed)

    def lookup(self, dirs) -> np.ndarray:
        d = _unit_dirs(dirs)
        h, w = self.data.shape[:2]
        phi = np.arctan2(d[..., 0], -d[..., 2])
        theta = np.arccos(np.clip(d[..., 1], -1.0, 1.0))
        u = (phi / (2.0 * np.pi) + 0.5) * w - 0.5
        v = np.clip(theta / np.pi * h - 0.5, 0.0, h - 1.0)
        u0 = np.floor(u).astype(np.int64)
        v0 = np.minimum(np.floor(v).astype(np.int64), max(h - 2, 0))
        fu = (u - u0)[..., None]
        fv = (v - v0)[..., None]
        v1 = np.minimum(v0 + 1, h - 1)
        a = self.data[v0, u0 % w] * (1 - fu) + self.data[v0, (u0 + 1) % w] * fu
        b = self.data[v1, u0 % w] * (1 - fu) + self.data[v1, (u0 + 1) % w] * fu
        return a * (1 - fv) + b * fv

    def directions(self):
        if self._dirs is None:
            dirs, dw = sphere_directions(self.n_samples, self.seed)
            self._dirs = (dirs, dw, self.lookup(dirs))
        return self._dirs


def flashlight_radiance(n, v, t, theta) -> np.ndarray:
    """Flash reflection for unit radiant intensity at distance ``t``."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise ValueError("viewing distance must be positive")
    n = np.asarray(n, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    cos = np.sum(n * v, axis=-1)
    th = theta.as_array() if isinstance(theta, brdf.TextelParams) else np.asarray(theta, dtype=np.float64)
    rho = brdf.eval_brdf(cos, th, validate=False)
    return rho * (np.maximum(cos, 0.0) / (t * t))[..., None]


def flashlight_radiance_grad(cos, t, theta):
    """Flash radiance and its partials w.r.t. theta ``(...,3,9)`` and ``cos`` ``(...,3)``."""
    rho, dth, dc = brdf.eval_brdf_with_gradient(cos, theta)
    lit = cos > 0.0
    inv_t2 = 1.0 / (t * t)
    cpos = np.where(lit, cos, 0.0)
    val = rho * (cpos * inv_t2)[..., None]
    d_theta = dth * (cpos * inv_t2)[..., None, None]
    d_cos = np.where(lit[..., None], (dc * cos[..., None] + rho) * inv_t2[..., None], 0.0)
    return val, d_theta, d_cos


def ambient_radiance(x, v, n, theta, env: EnvironmentMap, with_stderr: bool = False):
    """Direct environment lighting without shadows or interreflections.

    The integral over incident directions uses a fixed stratified direction
    set (see :func:`sphere_directions`); directions below the surface are
    dropped by the ``max(n.l, 0)`` factor.  Points seen from behind
    (``n.v <= 0``) return zero.
    """
    out = _ambient(np.asarray(n, dtype=np.float64).reshape(-1, 3),
                   np.asarray(v, dtype=np.float64).reshape(-1, 3),
                   _theta2d(theta, np.asarray(n).reshape(-1, 3).shape[0]), env,
                   want_grad=False, want_stderr=with_stderr)
    return out if with_stderr else out[0]


def _theta2d(theta, n):
    th = theta.as_array() if isinstance(theta, brdf.TextelParams) else np.asarray(theta, dtype=np.float64)
    return np.broadcast_to(th.reshape(-1, brdf.N_PARAMS), (n, brdf.N_PARAMS))


def ambient_radiance_grad(n, v, theta, env: EnvironmentMap):
    """Ambient radiance with partials w.r.t. theta ``(N,3,9)`` and normal ``(N,3,3)``."""
    return _ambient(n, v, theta, env, want_grad=True)


def _ambient(n, v, theta, env, want_grad=False, want_stderr=False, chunk=256):
    npts = n.shape[0]
    val = np.zeros((npts, 3))
    d_th = np.zeros((npts, 3, brdf.N_PARAMS)) if want_grad else None
    d_n = np.zeros((npts, 3, 3)) if want_grad else None
    se = np.zeros((npts, 3)) if want_stderr else None
    if env.is_black or npts == 0:
        return (val, d_th, d_n) if want_grad else (val, se)
    dirs, dw, radiance = env.directions()
    cv_all = np.sum(n * v, axis=1)
    front = np.nonzero(cv_all > 0.0)[0]
    for s in range(0, front.size, chunk):
        idx = front[s:s + chunk]
        cl_full = n[idx] @ dirs.T                            # (P, K)
        # only directions above the tangent plane contribute
        p, k = np.nonzero(cl_full > 0.0)
        cl = cl_full[p, k]
        nn, vv, ll = n[idx][p], v[idx][p], dirs[k]
        hv = ll + vv
        hv /= np.maximum(np.linalg.norm(hv, axis=-1, keepdims=True), 1e-300)
        ch = np.sum(hv * nn, axis=-1)
        cv = cv_all[idx][p]
        th = theta[idx][p]
        res = brdf.eval_brdf_bidirectional(cl, cv, ch, th, want_grad=want_grad)
        rho = res[0] if want_grad else res
        rl = radiance[k] * dw                                # (Q, 3)
        contrib = rho * (cl[:, None] * rl)
        acc = np.zeros((idx.size, 3))
        np.add.at(acc, p, contrib)
        val[idx] = acc
        if want_stderr:
            sq = np.zeros((idx.size, 3))
            np.add.at(sq, p, contrib * contrib)
            kk = dirs.shape[0]
            mean = acc / kk
            se[idx] = np.sqrt(np.maximum(sq / kk - mean * mean, 0.0)) * np.sqrt(kk)
        if want_grad:
            _, dth, dcl, dcv, dch = res
            gth = np.zeros((idx.size, 3, brdf.N_PARAMS))
            np.add.at(gth, p, dth * (cl[:, None] * rl)[..., None])
            d_th[idx] = gth
            g_l = (dcl * cl[:, None] + rho) * rl              # coefficient of l
            g_v = dcv * cl[:, None] * rl                      # coefficient of v
            g_h = dch * cl[:, None] * rl                      # coefficient of h
            gn = g_l[:, :, None] * ll[:, None, :] + g_v[:, :, None] * vv[:, None, :] \
                + g_h[:, :, None] * hv[:, None, :]
            acc_n = np.zeros((idx.size, 3, 3))
            np.add.at(acc_n, p, gn)
            d_n[idx] = acc_n
    return (val, d_th, d_n) if want_grad else (val, se)


def compose_intensity(ambient, flash, flashlight: Flashlight):
    """``ambient + s * gamma * flash``."""
    return np.asarray(ambient, dtype=np.float64) + flashlight.s * flashlight.gamma * np.asarray(flash, dtype=np.float64)


def saturated(rgb, threshold: float = 1.0) -> np.ndarray:
    """Per-pixel flag: any channel outside ``[0, threshold)``."""
    rgb = _as_rgb(rgb)
    return np.any((rgb >= threshold) | (rgb < 0.0), axis=-1)


def rgb_loss(rendered, observed, threshold: float = 1.0, valid=None, return_grad: bool = False):
    """Saturation-aware L1 loss averaged over pixels.

    A pixel is dropped only when both images are saturated there.  ``valid``
    optionally removes further pixels (they still count in the average).
    With ``return_grad`` also returns d loss / d rendered.
    """
    a = _as_rgb(rendered)
    b = _as_rgb(observed)
    if a.shape != b.shape:
        raise ValueError(f"image size mismatch: {a.shape} vs {b.shape}")
    keep = ~(saturated(a, threshold) & saturated(b, threshold))
    if valid is not None:
        keep &= np.asarray(valid, dtype=bool)
    npix = int(np.prod(a.shape[:-1]))
    diff = a - b
    loss = float(np.sum(np.abs(diff) * keep[..., None]) / npix)
    if not return_grad:
        return loss
    return loss, np.sign(diff) * keep[..., None] / npix


def mask_loss(alpha_sums, mask, return_grad: bool = False):
    """Mean binary cross entropy between accumulated alpha and a binary mask."""
    p = np.clip(np.asarray(alpha_sums, dtype=np.float64), EPS_BCE, 1.0 - EPS_BCE)
    m = np.asarray(mask, dtype=np.float64)
    if p.shape != m.shape:
        raise ValueError("alpha raster and mask differ in size")
    bce = -(m * np.log(p) + (1.0 - m) * np.log(1.0 - p))
    loss = float(bce.mean())
    if not return_grad:
        return loss
    raw = np.asarray(alpha_sums, dtype=np.float64)
    inside = (raw > EPS_BCE) & (raw < 1.0 - EPS_BCE)
    g = (-(m / p) + (1.0 - m) / (1.0 - p)) * inside / m.size
    return loss, g


def total_loss(rgb, eikonal, mask_term=None, w_E: float = DEFAULT_W_EIKONAL, w_M=None) -> float:
    """``rgb + w_E * eikonal + w_M * mask``; the mask weight defaults to 0.1 only with masks."""
    if mask_term is None:
        return float(rgb + w_E * eikonal)
    if w_M is None:
        w_M = DEFAULT_W_MASK
    return float(rgb + w_E * eikonal + w_M * mask_term)
