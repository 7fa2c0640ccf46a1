"""Volumetric alpha-composition renderer over signed distance fields.

A ray is ``x(t) = o - v t``; we store the marching direction ``d = -v``.
Inside the ROI interval each ray gets ``n`` stratified depths plus the far
bound, giving ``n`` sections.  Section opacity follows the logistic-CDF rule
on the SDF at its two ends and the section is shaded at its midpoint.

The flash and ambient composites are accumulated separately so that the
observed radiance is exactly ``ambient + s * gamma * flash`` per pixel.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import photometry
from .hdr import HdrImage
from .photometry import EnvironmentMap, Flashlight
from .scene import SdfScene

ROT_TOL = 1e-6


# --- cameras --------------------------------------------------------------------


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("resolution must be positive")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float) -> "Intrinsics":
        """Square pixels, horizontal field of view, centred principal point."""
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, width, height)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-from-camera pose for a camera at ``eye`` looking down its -Z at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    back = eye - np.asarray(target, dtype=np.float64)
    back /= np.linalg.norm(back)
    right = np.cross(np.asarray(up, dtype=np.float64), back)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(np.array([0.0, 0.0, 1.0]), back)
    right /= np.linalg.norm(right)
    true_up = np.cross(back, right)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, true_up, back, eye
    return pose


@dataclass
class CaptureView:
    """Pinhole camera with a co-located flashlight.

    ``pose`` is world-from-camera (OpenGL style: the camera looks down -Z,
    +Y is up in the image).  ``vignette`` is an optional per-pixel factor
    applied to the flash component.
    """

    intrinsics: Intrinsics
    pose: np.ndarray
    flashlight: Flashlight = field(default_factory=Flashlight)
    vignette: np.ndarray | None = None

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if self.pose.shape != (4, 4):
            raise ValueError("pose must be a 4x4 matrix")
        R = self.pose[:3, :3]
        if np.max(np.abs(R.T @ R - np.eye(3))) > ROT_TOL or np.linalg.det(R) < 0:
            raise ValueError("pose rotation is not orthonormal")
        if self.vignette is not None:
            self.vignette = np.asarray(self.vignette, dtype=np.float64)
            if self.vignette.shape != (self.intrinsics.height, self.intrinsics.width):
                raise ValueError("vignette raster must match the image resolution")

    @property
    def center(self) -> np.ndarray:
        return self.pose[:3, 3].copy()

    @property
    def n_pixels(self) -> int:
        return self.intrinsics.width * self.intrinsics.height

    def with_flashlight(self, flashlight: Flashlight) -> "CaptureView":
        return CaptureView(self.intrinsics, self.pose, flashlight, self.vignette)


def generate_rays(view: CaptureView, pixels=None):
    """Origins, unit marching directions ``d`` and flat pixel indices.

    ``pixels`` are flat indices (row-major); all pixels when omitted.  The
    shading view vector is ``v = -d``.
    """
    K = view.intrinsics
    if pixels is None:
        pixels = np.arange(K.width * K.height)
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1)
    u = (pixels % K.width) + 0.5
    w = (pixels // K.width) + 0.5
    cam = np.stack([(u - K.cx) / K.fx, -(w - K.cy) / K.fy, -np.ones_like(u)], axis=-1)
    d = cam @ view.pose[:3, :3].T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(view.pose[:3, 3], d.shape).copy()
    return o, d, pixels


def project(view: CaptureView, points) -> np.ndarray:
    """Continuous pixel coordinates ``(u, v)``; pixel centres sit at ``+0.5``."""
    K = view.intrinsics
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    R = view.pose[:3, :3]
    cam = (p - view.pose[:3, 3]) @ R
    z = -cam[:, 2]
    return np.stack([K.fx * cam[:, 0] / z + K.cx, -K.fy * cam[:, 1] / z + K.cy], axis=-1)


# --- sampling ---------------------------------------------------------------


def _splitmix(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def pixel_jitter(seed: int, pixels, n: int) -> np.ndarray:
    """Counter-based uniforms in [0, 1): row per pixel, ``n`` per row.

    The stream of a pixel depends only on ``(seed, pixel)``, so any subset
    or ordering of pixels reproduces the same numbers.
    """
    with np.errstate(over="ignore"):
        key = _splitmix(np.full(1, seed, dtype=np.uint64))
        pix = np.asarray(pixels, dtype=np.uint64).reshape(-1, 1)
        z = _splitmix(key ^ _splitmix(pix))
        z = _splitmix(z + np.arange(n, dtype=np.uint64)[None, :])
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def roi_interval(o, d, center, radius):
    """Entry/exit distances of rays against the ROI ball and a hit flag."""
    oc = o - center
    b = np.sum(d * oc, axis=-1)
    c = np.sum(oc * oc, axis=-1) - radius * radius
    disc = b * b - c
    root = np.sqrt(np.maximum(disc, 0.0))
    near = np.maximum(-b - root, 0.0)
    far = -b + root
    hit = (disc > 0.0) & (far > near)
    return near, far, hit


def default_sharpness(scene: SdfScene) -> float:
    return 64.0 / scene.roi_radius


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def neus_alpha(sdf_vals, k: float) -> np.ndarray:
    """Section opacities from SDF values at ``n + 1`` section ends."""
    s = np.asarray(sdf_vals, dtype=np.float64)
    q = _log_sigmoid(k * s[..., 1:]) - _log_sigmoid(k * s[..., :-1])
    return np.clip(-np.expm1(np.minimum(q, 0.0)), 0.0, 1.0)


def composite_weights(alpha) -> tuple[np.ndarray, np.ndarray]:
    """``(weights, transmittance_before)`` with ``w_i = alpha_i prod_{j<i} (1 - alpha_j)``."""
    a = np.asarray(alpha, dtype=np.float64)
    trans = np.cumprod(1.0 - a, axis=-1)
    T = np.concatenate([np.ones(a.shape[:-1] + (1,)), trans[..., :-1]], axis=-1)
    return a * T, T


@dataclass
class RaySampleSet:
    """Samples along one ray: section midpoints, opacities, colours, points."""

    depths: np.ndarray
    alpha: np.ndarray
    rgb: np.ndarray
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        if self.depths.size > 1 and np.any(np.diff(self.depths) <= 0):
            raise ValueError("sample depths must be strictly increasing")
        if np.any(self.alpha < 0) or np.any(self.alpha > 1):
            raise ValueError("alpha outside [0, 1]")

    def __len__(self):
        return self.depths.size

    @classmethod
    def empty(cls) -> "RaySampleSet":
        return cls(np.zeros(0), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)))


@dataclass
class CompositeResult:
    rgb: np.ndarray
    alpha: float | np.ndarray
    depth: float | np.ndarray
    normal: np.ndarray
    weights: np.ndarray


def composite(samples, background=0.0) -> CompositeResult:
    """Front-to-back composition of a :class:`RaySampleSet` (or ``alpha`` array).

    Depth and normal are weight-normalised expectations; the normal is
    re-normalised.  ``background`` fills the remaining transmittance.
    """
    if not isinstance(samples, RaySampleSet):
        a = np.asarray(samples, dtype=np.float64)
        samples = RaySampleSet(np.arange(1.0, a.size + 1.0), a, np.zeros((a.size, 3)), np.zeros((a.size, 3)))
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,))
    if len(samples) == 0:
        return CompositeResult(bg.copy(), 0.0, 0.0, np.zeros(3), np.zeros(0))
    w, _ = composite_weights(samples.alpha)
    acc = float(w.sum())
    rgb = w @ samples.rgb + (1.0 - acc) * bg
    depth = float(w @ samples.depths / acc) if acc > 0 else 0.0
    nrm = np.zeros(3)
    if samples.normals is not None and acc > 0:
        nrm = w @ samples.normals
        nn = np.linalg.norm(nrm)
        nrm = nrm / nn if nn > 0 else nrm
    return CompositeResult(rgb, acc, depth, nrm, w)


# --- rendering ---------------------------------------------------------------


@dataclass
class RenderOptions:
    n_samples: int = 128
    sharpness: float | None = None
    seed: int = 0
    jitter: bool = True
    background: object = "none"
    weight_floor: float = 1e-6
    ambient_floor: float = 1e-4
    threads: int = 1
    chunk: int = 4096

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.sharpness is not None and not self.sharpness > 0:
            raise ValueError("sharpness must be positive")
        bg = self.background
        if isinstance(bg, str) and bg not in ("none", "env") or np.shape(bg) not in ((), (3,)):
            raise ValueError("background must be 'none', 'env' or an RGB value")

    def to_dict(self) -> dict:
        bg = self.background if isinstance(self.background, str) else np.broadcast_to(
            np.asarray(self.background, dtype=float), (3,)).tolist()
        return {"n_samples": self.n_samples, "sharpness": self.sharpness, "seed": self.seed,
                "jitter": self.jitter, "background": bg, "weight_floor": self.weight_floor,
                "ambient_floor": self.ambient_floor}

    @classmethod
    def from_dict(cls, d: dict) -> "RenderOptions":
        known = {k: d[k] for k in ("n_samples", "sharpness", "seed", "jitter", "background",
                                   "weight_floor", "ambient_floor", "threads", "chunk") if k in d}
        return cls(**known)


@dataclass
class RayTrace:
    """Everything the backward pass needs for a batch of rays."""

    origins: np.ndarray
    dirs: np.ndarray
    hit: np.ndarray
    t_edges: np.ndarray
    sdf: np.ndarray
    roi_flag: np.ndarray
    alpha: np.ndarray
    weights: np.ndarray
    trans: np.ndarray
    sharpness: float
    active: np.ndarray          # (R, n) samples that were shaded
    x_mid: np.ndarray           # (P, 3) shaded points, P = active.sum()
    t_mid: np.ndarray           # (P,)
    grad_raw: np.ndarray        # (P, 3) SDF gradient
    normals: np.ndarray         # (P, 3)
    degenerate: np.ndarray      # (P,)
    theta: np.ndarray           # (P, 9)
    flash_s: np.ndarray         # (P, 3) unit-intensity flash radiance
    ambient_s: np.ndarray       # (P, 3), zero below the ambient weight floor
    amb_active: np.ndarray      # (P,)
    background: np.ndarray      # (R, 3)
    gain: np.ndarray            # (R,) s * gamma
    vignette: np.ndarray        # (R,)
    flash: np.ndarray           # (R, 3) vignetted unit-intensity composite
    ambient: np.ndarray         # (R, 3) ambient composite incl. background
    acc: np.ndarray             # (R,)
    depth: np.ndarray
    normal: np.ndarray
    flags: np.ndarray

    @property
    def radiance(self) -> np.ndarray:
        return self.ambient + self.gain[:, None] * self.flash


def _background(mode, dirs, env):
    if isinstance(mode, str):
        if mode == "none" or env is None:
            return np.zeros_like(dirs)
        return env.lookup(dirs)
    return np.broadcast_to(np.asarray(mode, dtype=np.float64), dirs.shape).copy()


def trace_rays(scene: SdfScene, origins, dirs, pixels, *, env: EnvironmentMap | None = None,
               options: RenderOptions | None = None, gain=1.0, vignette=1.0) -> RayTrace:
    """Sample, composite and shade a batch of rays (single-threaded core)."""
    opts = options or RenderOptions()
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    nr = o.shape[0]
    n = opts.n_samples
    k = opts.sharpness or default_sharpness(scene)
    gain = np.broadcast_to(np.asarray(gain, dtype=np.float64), (nr,)).copy()
    vignette = np.broadcast_to(np.asarray(vignette, dtype=np.float64), (nr,)).copy()
    bg = _background(opts.background, d, env)

    near, far, hit = roi_interval(o, d, scene.roi_center, scene.roi_radius)
    u = pixel_jitter(opts.seed, pixels, n) if opts.jitter else np.full((nr, n), 0.5)
    span = np.where(hit, far - near, 0.0)[:, None]
    t_edges = np.concatenate([near[:, None] + (np.arange(n) + u) * span / n, far[:, None]], axis=1)

    sdf_vals = np.full((nr, n + 1), np.inf)
    roi_flag = np.zeros((nr, n + 1), dtype=bool)
    hi = np.nonzero(hit)[0]
    if hi.size:
        pts = o[hi, None, :] + d[hi, None, :] * t_edges[hi, :, None]
        s, fl = scene.sdf(pts.reshape(-1, 3), return_flags=True)
        sdf_vals[hi] = s.reshape(hi.size, n + 1)
        roi_flag[hi] = fl.reshape(hi.size, n + 1)
    alpha = np.zeros((nr, n))
    alpha[hi] = neus_alpha(sdf_vals[hi], k)
    w, T = composite_weights(alpha)
    active = w > opts.weight_floor

    ri, si = np.nonzero(active)
    t_mid = 0.5 * (t_edges[ri, si] + t_edges[ri, si + 1])
    x_mid = o[ri] + d[ri] * t_mid[:, None]
    v = -d[ri]
    grad_raw = scene.gradient(x_mid) if ri.size else np.zeros((0, 3))
    gnorm = np.linalg.norm(grad_raw, axis=-1)
    degenerate = gnorm <= 1e-8
    normals = grad_raw / np.where(degenerate, 1.0, gnorm)[:, None]
    normals[degenerate] = 0.0
    theta = scene.sample_texel(x_mid) if ri.size else np.zeros((0, 9))
    flash_s = photometry.flashlight_radiance(normals, v, t_mid, theta) if ri.size else np.zeros((0, 3))
    ambient_s = np.zeros((ri.size, 3))
    amb_active = np.zeros(ri.size, dtype=bool)
    if env is not None and ri.size and not env.is_black:
        amb_active = w[ri, si] > max(opts.ambient_floor, opts.weight_floor)
        sel = np.nonzero(amb_active)[0]
        ambient_s[sel] = photometry.ambient_radiance(x_mid[sel], v[sel], normals[sel], theta[sel], env)

    def accumulate(vals):
        out = np.zeros((nr, 3))
        np.add.at(out, ri, w[ri, si, None] * vals)
        return out

    acc = w.sum(axis=1)
    flash = accumulate(flash_s) * vignette[:, None]
    ambient = accumulate(ambient_s) + (1.0 - acc)[:, None] * bg
    depth = np.zeros(nr)
    np.add.at(depth, ri, w[ri, si] * t_mid)
    depth = np.where(acc > 0, depth / np.where(acc > 0, acc, 1.0), 0.0)
    nsum = accumulate(normals)
    nlen = np.linalg.norm(nsum, axis=-1, keepdims=True)
    normal = np.where(nlen > 0, nsum / np.where(nlen > 0, nlen, 1.0), 0.0)
    flags = np.zeros(nr, dtype=bool)
    np.logical_or.at(flags, ri, degenerate)

    return RayTrace(o, d, hit, t_edges, sdf_vals, roi_flag, alpha, w, T, k, active, x_mid, t_mid,
                    grad_raw, normals, degenerate, theta, flash_s, ambient_s, amb_active, bg, gain, vignette,
                    flash, ambient, acc, depth, normal, flags)


def sample_ray(scene: SdfScene, origin, direction, n_samples: int = 128, *, sharpness=None,
               seed: int = 0, pixel: int = 0, jitter: bool = True,
               flashlight: Flashlight | None = None, env: EnvironmentMap | None = None) -> RaySampleSet:
    """Stratified samples of one ray inside the ROI, with opacities and shaded colour.

    Returns an empty set when the ray misses the ROI.  Colours follow
    ``ambient + s * gamma * flash`` for the given flashlight (unit, on, by
    default); all samples are shaded.
    """
    fl = flashlight or Flashlight()
    opts = RenderOptions(n_samples=n_samples, sharpness=sharpness, seed=seed, jitter=jitter,
                         weight_floor=-1.0, ambient_floor=-1.0)
    d = np.asarray(direction, dtype=np.float64).reshape(1, 3)
    d = d / np.linalg.norm(d)
    tr = trace_rays(scene, np.asarray(origin, dtype=np.float64).reshape(1, 3), d, [pixel],
                    env=env, options=opts)
    if not tr.hit[0]:
        return RaySampleSet.empty()
    rgb = tr.ambient_s + fl.s * fl.gamma * tr.flash_s
    return RaySampleSet(tr.t_mid, tr.alpha[0], rgb, tr.x_mid, tr.normals)


@dataclass
class RenderResult:
    radiance: HdrImage
    flash: np.ndarray
    ambient: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    alpha: np.ndarray
    flags: np.ndarray
    background: object = "none"

    @property
    def rgb(self) -> np.ndarray:
        return self.radiance.rgb


def view_gain(view: CaptureView) -> float:
    return float(view.flashlight.s * view.flashlight.gamma)


def render_rays(scene, view: CaptureView, pixels, env=None, options=None) -> RayTrace:
    o, d, pix = generate_rays(view, pixels)
    vig = 1.0 if view.vignette is None else view.vignette.reshape(-1)[pix]
    return trace_rays(scene, o, d, pix, env=env, options=options, gain=view_gain(view), vignette=vig)


def render_view(scene: SdfScene, view: CaptureView, env: EnvironmentMap | None = None,
                options: RenderOptions | None = None) -> RenderResult:
    """Render radiance, depth (distance along the ray), normal and alpha rasters."""
    opts = options or RenderOptions()
    K = view.intrinsics
    npx = K.width * K.height
    chunks = [np.arange(i, min(i + opts.chunk, npx)) for i in range(0, npx, opts.chunk)]
    out = {name: np.zeros((npx, 3)) for name in ("flash", "ambient", "normal")}
    out.update({name: np.zeros(npx) for name in ("depth", "acc")})
    flags = np.zeros(npx, dtype=bool)

    def work(pix):
        tr = render_rays(scene, view, pix, env, opts)
        out["flash"][pix] = tr.flash
        out["ambient"][pix] = tr.ambient
        out["normal"][pix] = tr.normal
        out["depth"][pix] = tr.depth
        out["acc"][pix] = tr.acc
        flags[pix] = tr.flags

    if opts.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(opts.threads) as pool:
            list(pool.map(work, chunks))
    else:
        for c in chunks:
            work(c)

    shape = (K.height, K.width)
    gain = view_gain(view)
    radiance = out["ambient"] + gain * out["flash"]
    return RenderResult(
        radiance=HdrImage(radiance.reshape(shape + (3,)), out["acc"].reshape(shape)),
        flash=out["flash"].reshape(shape + (3,)),
        ambient=out["ambient"].reshape(shape + (3,)),
        depth=out["depth"].reshape(shape),
        normal=out["normal"].reshape(shape + (3,)),
        alpha=out["acc"].reshape(shape),
        flags=flags.reshape(shape),
        background=opts.background,
    )


# --- backward ------------------------------------------------------------------


@dataclass
class RayGradients:
    gain: np.ndarray            # (R,) dL / d(s gamma) per ray
    theta_params: np.ndarray    # flat texel-field parameter gradient
    shape_params: np.ndarray    # flat geometry parameter gradient
    sharpness: float


def _suffix_blend(alpha, colors, bg):
    """``R_i`` = colour composited from sample ``i + 1`` onwards (bg at the end)."""
    n = alpha.shape[1]
    R = np.empty_like(colors)
    acc = bg.copy()
    for i in range(n - 1, -1, -1):
        R[:, i] = acc
        acc = alpha[:, i, None] * colors[:, i] + (1.0 - alpha[:, i, None]) * acc
    return R


def backward_rays(scene: SdfScene, tr: RayTrace, d_radiance, d_acc=None, env=None,
                  want_shape: bool = True, want_theta: bool = True) -> RayGradients:
    """Vector-Jacobian product of :func:`trace_rays` outputs.

    ``d_radiance`` is ``dL/d radiance`` per ray ``(R, 3)`` and ``d_acc`` an
    optional ``dL/d alpha`` ``(R,)``.  Gradients flow to the flash gain,
    the textel field, the geometry parameters and the sharpness.
    """
    gC = np.asarray(d_radiance, dtype=np.float64).reshape(-1, 3)
    nr, n = tr.alpha.shape
    gacc = np.zeros(nr) if d_acc is None else np.asarray(d_acc, dtype=np.float64).reshape(nr)
    ri, si = np.nonzero(tr.active)
    w = tr.weights[ri, si]

    d_gain = np.sum(gC * tr.flash, axis=1)

    # per-sample colour cotangent
    g_sample = w[:, None] * gC[ri]                              # dL/dc_i (P,3)
    g_flash = g_sample * (tr.gain[ri] * tr.vignette[ri])[:, None]
    g_amb = g_sample

    # opacity cotangent through the suffix recursion
    colors = np.zeros((nr, n, 3))
    colors[ri, si] = tr.ambient_s + (tr.gain[ri] * tr.vignette[ri])[:, None] * tr.flash_s
    R = _suffix_blend(tr.alpha, colors, tr.background)
    ones = np.zeros((nr, n, 3))
    ones[..., 0] = 1.0
    Racc = _suffix_blend(tr.alpha, ones, np.zeros((nr, 3)))[..., 0]
    g_alpha = tr.trans * (np.einsum("rnc,rc->rn", colors - R, gC) + (1.0 - Racc) * gacc[:, None])

    # alpha -> sdf values and sharpness
    k = tr.sharpness
    s = np.where(np.isfinite(tr.sdf), tr.sdf, 0.0)
    pos = (tr.alpha > 0.0) & (tr.alpha < 1.0)
    one_m = 1.0 - tr.alpha
    sig0 = 1.0 / (1.0 + np.exp(np.clip(k * s[:, :-1], -700, 700)))     # sigma(-k s_i)
    sig1 = 1.0 / (1.0 + np.exp(np.clip(k * s[:, 1:], -700, 700)))
    base = np.where(pos, g_alpha * one_m, 0.0)
    g_sdf = np.zeros_like(s)
    g_sdf[:, :-1] += base * k * sig0
    g_sdf[:, 1:] -= base * k * sig1
    d_k = float(np.sum(-base * (s[:, 1:] * sig1 - s[:, :-1] * sig0)))
    g_sdf[tr.roi_flag] = 0.0
    g_sdf[~tr.hit] = 0.0

    theta_grad = np.zeros(tr.theta.size)
    shape_grad = np.zeros(len(scene.geometry.param_names))
    if ri.size == 0:
        if want_shape:
            shape_grad = _shape_from_sdf(scene, tr, g_sdf)
        return RayGradients(d_gain, scene.texel_field.params() * 0.0, shape_grad, d_k)

    v = -tr.dirs[ri]
    cos = np.sum(tr.normals * v, axis=-1)
    _, fdth, fdcos = photometry.flashlight_radiance_grad(cos, tr.t_mid, tr.theta)
    g_theta = np.einsum("pc,pcj->pj", g_flash, fdth)
    g_n = np.sum(g_flash * fdcos, axis=1)[:, None] * v
    sel = np.nonzero(tr.amb_active)[0]
    if env is not None and not env.is_black and sel.size:
        _, adth, adn = photometry.ambient_radiance_grad(tr.normals[sel], v[sel], tr.theta[sel], env)
        g_theta[sel] += np.einsum("pc,pcj->pj", g_amb[sel], adth)
        g_n[sel] += np.einsum("pc,pcj->pj", g_amb[sel], adn)
    g_theta[tr.degenerate] = 0.0
    g_n[tr.degenerate] = 0.0

    theta_field = scene.texel_field.vjp(tr.x_mid, scene.geometry, g_theta) if want_theta else \
        np.zeros(scene.texel_field.params().size)
    if want_shape:
        gnorm = np.linalg.norm(tr.grad_raw, axis=-1, keepdims=True)
        gnorm = np.where(gnorm > 1e-8, gnorm, 1.0)
        g_grad = (g_n - tr.normals * np.sum(g_n * tr.normals, axis=1, keepdims=True)) / gnorm
        shape_grad = _shape_from_sdf(scene, tr, g_sdf)
        if np.any(g_grad):
            shape_grad = shape_grad + scene.geometry.gradient_param_vjp(tr.x_mid, g_grad)
    return RayGradients(d_gain, theta_field, shape_grad, d_k)


def _shape_from_sdf(scene, tr, g_sdf):
    rows = np.nonzero(tr.hit)[0]
    if rows.size == 0 or not np.any(g_sdf):
        return np.zeros(len(scene.geometry.param_names))
    pts = tr.origins[rows, None, :] + tr.dirs[rows, None, :] * tr.t_edges[rows, :, None]
    return scene.geometry.param_vjp(pts.reshape(-1, 3), g_sdf[rows].reshape(-1))
