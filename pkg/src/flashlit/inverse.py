"""Recover reflectance, flashlight intensity and shape from multi-view images.

Optimisation is plain Adam over a flat parameter vector with hand-written
reverse-mode gradients (see :func:`flashlit.renderer.backward_rays`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import brdf, photometry
from .hdr import HdrImage, _as_rgb
from .photometry import EnvironmentMap, Flashlight
from .renderer import CaptureView, RenderOptions, backward_rays, generate_rays, trace_rays
from .scene import SdfScene

DIVERGENCE_FACTOR = 1e3
DIVERGENCE_PATIENCE = 100
GAMMA_FLOOR = 1e-6


class FitDiverged(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


class NumericalError(FloatingPointError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# --- problem description ---------------------------------------------------------


@dataclass
class Observation:
    view: CaptureView
    image: np.ndarray
    mask: np.ndarray | None = None
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.image = _as_rgb(self.image)
        K = self.view.intrinsics
        if self.image.shape != (K.height, K.width, 3):
            raise ValueError("observation image does not match its camera resolution")
        for name in ("mask", "valid"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr)
                if arr.shape != (K.height, K.width):
                    raise ValueError(f"{name} raster does not match the image")
                setattr(self, name, arr)


def flash_isolate(flash_img, noflash_img, threshold: float = 1.0) -> HdrImage:
    """Flash-only component of a flash/no-flash pair.

    Returns the per-pixel difference; its ``mask`` is ``False`` wherever
    either input is saturated (those pixels are zeroed).
    """
    a = _as_rgb(flash_img)
    b = _as_rgb(noflash_img)
    if a.shape != b.shape:
        raise ValueError("flash and no-flash images differ in size")
    ok = ~(photometry.saturated(a, threshold) | photometry.saturated(b, threshold))
    diff = np.where(ok[..., None], a - b, 0.0)
    return HdrImage(diff, ok)


def calibrate_gamma(observed, albedo, distance: float, cos_incidence: float = 1.0) -> float:
    """Flash intensity from a Lambertian patch of known albedo.

    ``observed`` is the flash-only radiance of the patch (RGB or scalar).
    """
    obs = np.asarray(observed, dtype=np.float64)
    alb = np.broadcast_to(np.asarray(albedo, dtype=np.float64), obs.shape)
    if np.any(alb <= 0) or cos_incidence <= 0 or distance <= 0:
        raise ValueError("calibration needs positive albedo, cosine and distance")
    return float(np.mean(obs * np.pi * distance**2 / (alb * cos_incidence)))


def calibration_reading(gamma: float, albedo, distance: float, cos_incidence: float = 1.0) -> np.ndarray:
    """Forward model of the calibration patch (flash-only radiance)."""
    alb = np.broadcast_to(np.asarray(albedo, dtype=np.float64), (3,))
    theta = brdf.TextelParams(tuple(alb.tolist()), roughness=0.25)
    n = np.array([0.0, 0.0, 1.0])
    v = np.array([math.sqrt(max(0.0, 1 - cos_incidence**2)), 0.0, cos_incidence])
    return gamma * photometry.flashlight_radiance(n, v, distance, theta)


@dataclass
class FitProblem:
    """Observations plus a scene template and the names of the free parameters.

    ``free`` entries: ``"gamma"``, ``"sharpness"``, ``"theta"`` (whole textel
    field), ``"theta:<component>"`` (e.g. ``theta:roughness``), ``"shape"``
    (all geometry parameters) or ``"shape:<name>"`` (e.g. ``shape:radius``).
    """

    observations: list
    scene: SdfScene
    free: tuple = ("theta", "gamma")
    gamma: float = 1.0
    env: EnvironmentMap | None = None
    options: RenderOptions = field(default_factory=RenderOptions)
    w_eikonal: float = photometry.DEFAULT_W_EIKONAL
    w_mask: float | None = None
    saturation: float = 1.0

    def __post_init__(self):
        self.free = tuple(self.free)
        if not self.observations:
            raise ValueError("a fit needs at least one observation")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        known = {"gamma", "sharpness", "theta", "shape"}
        for f in self.free:
            if f.split(":", 1)[0] not in known:
                raise ValueError(f"unknown free parameter {f!r}")
        if any(f.startswith("theta") for f in self.free):
            if not any(o.view.flashlight.s == 1 for o in self.observations):
                raise ValueError(
                    "reflectance is free but no observation has the flashlight on; "
                    "the textel parameters would be unconstrained")
        self.layout = ParamLayout.build(self)

    @property
    def has_masks(self) -> bool:
        return any(o.mask is not None for o in self.observations)

    @property
    def total_pixels(self) -> int:
        return sum(o.view.n_pixels for o in self.observations)


@dataclass
class Segment:
    name: str
    kind: str            # gamma | sharpness | theta | shape
    index: np.ndarray    # positions inside the owner's own parameter vector
    lower: np.ndarray
    upper: np.ndarray


class ParamLayout:
    """Maps the flat optimisation vector onto scene, gamma and sharpness."""

    def __init__(self, segments, names):
        self.segments = segments
        self.names = names
        self.size = len(names)

    @classmethod
    def build(cls, problem: FitProblem) -> "ParamLayout":
        segs, names = [], []
        scene = problem.scene
        tex_names = list(scene.texel_field.param_names)
        geo_names = list(scene.geometry.param_names)
        theta_idx, shape_idx = set(), set()
        for f in problem.free:
            kind, _, sub = f.partition(":")
            if kind == "theta":
                if not sub:
                    theta_idx.update(range(len(tex_names)))
                else:
                    hits = [i for i, n in enumerate(tex_names) if n == sub or n.endswith("." + sub)
                            or (sub == "base_color" and "base_color" in n)]
                    if not hits:
                        raise ValueError(f"textel field has no parameter {sub!r}")
                    theta_idx.update(hits)
            elif kind == "shape":
                if not sub:
                    shape_idx.update(range(len(geo_names)))
                else:
                    if sub not in geo_names:
                        raise ValueError(f"geometry has no parameter {sub!r}")
                    shape_idx.add(geo_names.index(sub))
        if theta_idx:
            idx = np.array(sorted(theta_idx))
            segs.append(Segment("theta", "theta", idx, np.zeros(idx.size), np.ones(idx.size)))
            names += [f"theta:{tex_names[i]}" for i in idx]
        if "gamma" in problem.free:
            segs.append(Segment("gamma", "gamma", np.array([0]), np.array([GAMMA_FLOOR]), np.array([np.inf])))
            names.append("gamma")
        if shape_idx:
            idx = np.array(sorted(shape_idx))
            lo, hi = scene.geometry.bounds()
            segs.append(Segment("shape", "shape", idx, lo[idx], hi[idx]))
            names += [f"shape:{geo_names[i]}" for i in idx]
        if "sharpness" in problem.free:
            segs.append(Segment("sharpness", "sharpness", np.array([0]), np.array([1e-3]), np.array([np.inf])))
            names.append("sharpness")
        return cls(segs, names)

    def slices(self):
        start = 0
        for seg in self.segments:
            yield seg, slice(start, start + seg.index.size)
            start += seg.index.size

    @property
    def lower(self) -> np.ndarray:
        return np.concatenate([s.lower for s in self.segments]) if self.segments else np.zeros(0)

    @property
    def upper(self) -> np.ndarray:
        return np.concatenate([s.upper for s in self.segments]) if self.segments else np.zeros(0)

    def initial(self, problem: FitProblem) -> np.ndarray:
        out = np.zeros(self.size)
        k0 = problem.options.sharpness or 64.0 / problem.scene.roi_radius
        for seg, sl in self.slices():
            if seg.kind == "theta":
                out[sl] = problem.scene.texel_field.params()[seg.index]
            elif seg.kind == "shape":
                out[sl] = problem.scene.geometry.params()[seg.index]
            elif seg.kind == "gamma":
                out[sl] = problem.gamma
            else:
                out[sl] = k0
        return out

    def apply(self, problem: FitProblem, x):
        """``(scene, gamma, sharpness)`` for the parameter vector ``x``."""
        scene = problem.scene
        gamma = problem.gamma
        k = problem.options.sharpness or 64.0 / scene.roi_radius
        for seg, sl in self.slices():
            if seg.kind == "theta":
                p = scene.texel_field.params()
                p[seg.index] = x[sl]
                scene = scene.with_texel(scene.texel_field.with_params(p))
            elif seg.kind == "shape":
                p = scene.geometry.params()
                p[seg.index] = x[sl]
                scene = scene.with_geometry(scene.geometry.with_params(p))
            elif seg.kind == "gamma":
                gamma = float(x[sl][0])
            else:
                k = float(x[sl][0])
        return scene, gamma, k


# --- loss and gradients ------------------------------------------------------------


@dataclass
class Batch:
    obs: np.ndarray          # observation index per ray
    pixels: np.ndarray       # flat pixel index per ray
    eikonal_points: np.ndarray | None = None


def draw_batch(problem: FitProblem, rng, size: int = 256, eikonal_points: int = 256) -> Batch:
    """Rays uniform over all pixels of all observations."""
    sizes = np.array([o.view.n_pixels for o in problem.observations])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    flat = np.sort(rng.integers(0, offsets[-1], size=size))
    obs = np.searchsorted(offsets, flat, side="right") - 1
    pts = problem.scene.uniform_roi_points(eikonal_points, rng) if _shape_free(problem) else None
    return Batch(obs, flat - offsets[obs], pts)


def full_batch(problem: FitProblem, obs_ids=None) -> Batch:
    ids = range(len(problem.observations)) if obs_ids is None else obs_ids
    o = np.concatenate([np.full(problem.observations[i].view.n_pixels, i) for i in ids])
    p = np.concatenate([np.arange(problem.observations[i].view.n_pixels) for i in ids])
    return Batch(o, p, None)


def _shape_free(problem) -> bool:
    return any(s.kind == "shape" for s in problem.layout.segments)


def _trace_batch(problem, scene, gamma, k, batch: Batch):
    opts = RenderOptions(**{**problem.options.__dict__, "sharpness": k})
    origins, dirs, gains, vigs = [], [], [], []
    for i in np.unique(batch.obs):
        obs = problem.observations[i]
        sel = batch.obs == i
        o, d, _ = generate_rays(obs.view, batch.pixels[sel])
        origins.append(o)
        dirs.append(d)
        gains.append(np.full(sel.sum(), obs.view.flashlight.s * gamma))
        vig = 1.0 if obs.view.vignette is None else obs.view.vignette.reshape(-1)[batch.pixels[sel]]
        vigs.append(np.broadcast_to(vig, (sel.sum(),)))
    # rays are grouped by observation; batches are sorted so this keeps order
    tr = trace_rays(scene, np.concatenate(origins), np.concatenate(dirs), batch.pixels,
                    env=problem.env, options=opts, gain=np.concatenate(gains),
                    vignette=np.concatenate(vigs))
    return tr


def _gather(problem, batch, attr):
    out = []
    for i in np.unique(batch.obs):
        arr = getattr(problem.observations[i], attr)
        sel = batch.obs == i
        if attr == "image":
            out.append(arr.reshape(-1, 3)[batch.pixels[sel]])
        else:
            out.append(None if arr is None else arr.reshape(-1)[batch.pixels[sel]])
    return out


def loss_and_gradients(problem: FitProblem, params, batch: Batch, want_grad: bool = True):
    """Total loss on ``batch`` and its gradient w.r.t. the free parameter vector.

    Returns ``(loss, grad, parts)`` where ``parts`` holds the individual terms.
    """
    if np.any(np.diff(batch.obs) < 0):
        order = np.lexsort((batch.pixels, batch.obs))
        batch = Batch(batch.obs[order], batch.pixels[order], batch.eikonal_points)
    x = np.asarray(params, dtype=np.float64)
    scene, gamma, k = problem.layout.apply(problem, x)
    tr = _trace_batch(problem, scene, gamma, k, batch)

    observed = np.concatenate(_gather(problem, batch, "image"))
    valid_parts = _gather(problem, batch, "valid")
    valid = None
    if any(v is not None for v in valid_parts):
        valid = np.concatenate([np.ones(len(m), bool) if v is None else v.astype(bool)
                                for v, m in zip(valid_parts, _gather(problem, batch, "image"))])
    rgb, d_rad = photometry.rgb_loss(tr.radiance, observed, problem.saturation, valid, return_grad=True)
    parts = {"rgb": rgb}

    d_acc = None
    mask_term = None
    if problem.has_masks:
        mparts = _gather(problem, batch, "mask")
        has = np.concatenate([np.full(len(m), m is not None) for m in mparts])
        mvals = np.concatenate([np.zeros(len(i)) if m is None else m.astype(float)
                                for m, i in zip(mparts, _gather(problem, batch, "image"))])
        if np.any(has):
            mask_term, g = photometry.mask_loss(tr.acc[has], mvals[has], return_grad=True)
            d_acc = np.zeros(tr.acc.size)
            w_m = photometry.DEFAULT_W_MASK if problem.w_mask is None else problem.w_mask
            d_acc[has] = w_m * g
            parts["mask"] = mask_term

    eik = 0.0
    eik_grad = None
    if batch.eikonal_points is not None and _shape_free(problem):
        pts = batch.eikonal_points
        g = scene.geometry.gradient(pts)
        gn = np.linalg.norm(g, axis=1)
        eik = float(np.mean((1.0 - gn) ** 2))
        if want_grad:
            W = (-2.0 * (1.0 - gn) / np.maximum(gn, 1e-12))[:, None] * g / len(pts)
            eik_grad = scene.geometry.gradient_param_vjp(pts, W)
        parts["eikonal"] = eik

    total = photometry.total_loss(rgb, eik, mask_term, problem.w_eikonal, problem.w_mask)
    if not want_grad:
        return total, None, parts

    rg = backward_rays(scene, tr, d_rad, d_acc, env=problem.env,
                       want_shape=_shape_free(problem),
                       want_theta=any(s.kind == "theta" for s in problem.layout.segments))
    grad = np.zeros(problem.layout.size)
    for seg, sl in problem.layout.slices():
        if seg.kind == "theta":
            grad[sl] = rg.theta_params[seg.index]
        elif seg.kind == "shape":
            gs = rg.shape_params
            if eik_grad is not None:
                gs = gs + problem.w_eikonal * eik_grad
            grad[sl] = gs[seg.index]
        elif seg.kind == "gamma":
            s = tr.gain / gamma
            grad[sl] = np.sum(rg.gain * s)
        else:
            grad[sl] = rg.sharpness
    if not np.all(np.isfinite(grad)):
        bad = [problem.layout.names[i] for i in np.nonzero(~np.isfinite(grad))[0]]
        raise NumericalError("non-finite gradient", {"parameters": bad, "loss": total})
    return total, grad, parts


def gradient_check(problem: FitProblem, params, batch: Batch, n_coords: int = 20, seed: int = 0,
                   step: float = 1e-6) -> dict:
    """Compare analytic gradient coordinates with central differences.

    Shading below the weight floors is disabled for the comparison so the
    loss is smooth in every coordinate.
    """
    smooth = FitProblem(problem.observations, problem.scene, problem.free, problem.gamma, problem.env,
                        RenderOptions(**{**problem.options.__dict__, "weight_floor": 0.0,
                                         "ambient_floor": 0.0}),
                        problem.w_eikonal, problem.w_mask, problem.saturation)
    x = np.asarray(params, dtype=np.float64)
    _, g, _ = loss_and_gradients(smooth, x, batch)
    rng = np.random.default_rng(seed)
    coords = rng.choice(x.size, size=min(n_coords, x.size), replace=False)
    rows = []
    for c in coords:
        h = step * max(1.0, abs(x[c]))
        xp, xm = x.copy(), x.copy()
        xp[c] += h
        xm[c] -= h
        fd = (loss_and_gradients(smooth, xp, batch, want_grad=False)[0]
              - loss_and_gradients(smooth, xm, batch, want_grad=False)[0]) / (2 * h)
        rel = abs(fd - g[c]) / max(abs(fd), abs(g[c]), 1e-12)
        rows.append({"name": problem.layout.names[c], "analytic": float(g[c]), "numeric": float(fd),
                     "rel_error": float(rel)})
    return {"coords": rows, "max_rel_error": max((r["rel_error"] for r in rows), default=0.0)}


# --- optimiser ---------------------------------------------------------------------


@dataclass
class FitConfig:
    iterations: int = 6000
    batch_size: int = 256
    lr: float = 5e-4
    lr_final: float = 2.5e-5
    decay_iters: int = 5000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    param_mode: str = "project"
    eikonal_points: int = 256
    lr_scale: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.param_mode not in ("project", "sigmoid"):
            raise ValueError("param_mode must be 'project' or 'sigmoid'")
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")

    def learning_rate(self, step: int) -> float:
        if self.decay_iters <= 0 or step >= self.decay_iters:
            return self.lr_final if self.decay_iters > 0 else self.lr
        return self.lr + (self.lr_final - self.lr) * step / self.decay_iters

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        keys = cls.__dataclass_fields__.keys()
        return cls(**{k: v for k, v in d.items() if k in keys})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    seed: int = 0

    @classmethod
    def zeros(cls, n: int, seed: int = 0) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), 0, seed)

    def adam_step(self, grad, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> np.ndarray:
        """Returns the update to subtract; mutates the moments."""
        self.step += 1
        self.m = beta1 * self.m + (1.0 - beta1) * grad
        self.v = beta2 * self.v + (1.0 - beta2) * grad * grad
        mh = self.m / (1.0 - beta1**self.step)
        vh = self.v / (1.0 - beta2**self.step)
        if not (np.all(np.isfinite(self.m)) and np.all(np.isfinite(self.v))):
            raise NumericalError("optimizer moments became non-finite")
        return lr * mh / (np.sqrt(vh) + eps)


def _finite_box(lo, hi):
    return np.isfinite(lo) & np.isfinite(hi)


def _to_latent(x, lo, hi, mode):
    if mode != "sigmoid":
        return x.copy()
    z = x.copy()
    box = _finite_box(lo, hi)
    u = np.clip((x[box] - lo[box]) / (hi[box] - lo[box]), 1e-6, 1 - 1e-6)
    z[box] = np.log(u / (1 - u))
    return z


def _from_latent(z, lo, hi, mode):
    if mode != "sigmoid":
        return z.copy(), np.ones_like(z)
    x = z.copy()
    jac = np.ones_like(z)
    box = _finite_box(lo, hi)
    s = 1.0 / (1.0 + np.exp(-z[box]))
    x[box] = lo[box] + (hi[box] - lo[box]) * s
    jac[box] = (hi[box] - lo[box]) * s * (1 - s)
    return x, jac


@dataclass
class FitResult:
    scene: SdfScene
    gamma: float
    sharpness: float
    params: np.ndarray
    names: list
    history: list
    iterations: int

    def param_dict(self) -> dict:
        return {n: float(v) for n, v in zip(self.names, self.params)}


def fit(problem: FitProblem, config: FitConfig | None = None, callback=None) -> FitResult:
    """Adam with a linear learning-rate decay and bound projection."""
    cfg = config or FitConfig()
    lay = problem.layout
    lo, hi = lay.lower, lay.upper
    x = np.clip(lay.initial(problem), lo, hi)
    z = _to_latent(x, lo, hi, cfg.param_mode)
    state = OptimizerState.zeros(lay.size, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    scale = np.ones(lay.size)
    for key, val in cfg.lr_scale.items():
        for i, name in enumerate(lay.names):
            if name == key or name.split(":", 1)[0] == key:
                scale[i] = float(val)
    history = []
    initial_loss = None
    bad_run = 0
    for it in range(cfg.iterations):
        batch = draw_batch(problem, rng, cfg.batch_size, cfg.eikonal_points)
        x, jac = _from_latent(z, lo, hi, cfg.param_mode)
        loss, grad, _ = loss_and_gradients(problem, x, batch)
        if not math.isfinite(loss):
            raise NumericalError("non-finite loss", {"iteration": it})
        history.append(loss)
        if initial_loss is None:
            initial_loss = max(loss, 1e-300)
        bad_run = bad_run + 1 if loss > DIVERGENCE_FACTOR * initial_loss else 0
        if bad_run >= DIVERGENCE_PATIENCE:
            raise FitDiverged(f"loss exceeded {DIVERGENCE_FACTOR:g}x its initial value for "
                              f"{DIVERGENCE_PATIENCE} steps", history)
        z = z - scale * state.adam_step(grad * jac, cfg.learning_rate(it), cfg.beta1, cfg.beta2, cfg.eps)
        if cfg.param_mode == "project":
            z = np.clip(z, lo, hi)
        if callback is not None:
            callback(it, loss, _from_latent(z, lo, hi, cfg.param_mode)[0])
    x, _ = _from_latent(z, lo, hi, cfg.param_mode)
    scene, gamma, k = lay.apply(problem, x)
    return FitResult(scene, gamma, k, x, list(lay.names), history, cfg.iterations)


# --- flashlight-ratio experiment -------------------------------------------------


@dataclass
class RatioReport:
    ratio: float
    gamma: float
    env_scale: float
    constrained: bool
    errors: dict
    fitted: dict
    final_loss: float | None

    def to_dict(self) -> dict:
        return {"ratio": self.ratio, "gamma": self.gamma, "env_scale": self.env_scale,
                "constrained": self.constrained, "errors": self.errors, "fitted": self.fitted,
                "final_loss": self.final_loss}


def _mean_intensity(images, masks):
    vals = [img[m] for img, m in zip(images, masks)]
    return float(np.mean(np.concatenate(vals)))


def ratio_sweep(truth: SdfScene, views, env: EnvironmentMap, ratios, *, total: float = 0.35,
                init_theta=None, options: RenderOptions | None = None, config: FitConfig | None = None,
                noise: float = 0.01, clip: float | None = 1.0, seed: int = 0) -> list:
    """Fit reflectance from flash/no-flash pairs at several flashlight ratios.

    For each ratio ``r`` the flash intensity and an environment scale are set
    so that, averaged over the foreground pixels of the flash-on images, the
    flash component is the fraction ``r`` of a fixed total ``total``.
    Both images receive shot noise ``noise * sqrt(I)`` and clipping at
    ``clip``; the flash component is isolated by differencing and fitted as a
    darkroom problem with ``gamma`` pinned by a noise-free calibration patch.
    Ratio 0 has no flash signal: its reflectance is reported unconstrained.
    """
    opts = options or RenderOptions()
    unit_flash, unit_amb, fg = [], [], []
    from .renderer import render_view  # local import keeps module import light
    for v in views:
        r_f = render_view(truth, v.with_flashlight(Flashlight(1.0, 1)), None, opts)
        r_a = render_view(truth, v.with_flashlight(Flashlight(1.0, 0)), env, opts)
        unit_flash.append(r_f.flash)
        unit_amb.append(r_a.ambient)
        fg.append(r_f.alpha > 0.5)
    f_mean = _mean_intensity(unit_flash, fg)
    a_mean = _mean_intensity(unit_amb, fg)
    true_theta = truth.texel_field.params()
    rng = np.random.default_rng(seed)
    reports = []
    for ratio in ratios:
        ratio = float(ratio)
        if not 0.0 <= ratio <= 1.0:
            raise ValueError("ratios must lie in [0, 1]")
        gamma = ratio * total / f_mean
        kappa = (1.0 - ratio) * total / a_mean if a_mean > 0 else 0.0
        if ratio == 0.0:
            reports.append(RatioReport(ratio, 0.0, kappa, False,
                                       {k: None for k in ("base_color", "roughness", "metallic")}, {}, None))
            continue
        obs = []
        for v, f, a in zip(views, unit_flash, unit_amb):
            on = kappa * a + gamma * f
            off = kappa * a
            on = _noisy(on, noise, clip, rng)
            off = _noisy(off, noise, clip, rng)
            iso = flash_isolate(on, off, threshold=clip if clip is not None else np.inf)
            obs.append(Observation(v.with_flashlight(Flashlight(1.0, 1)), iso.rgb, valid=iso.mask))
        pinned = calibrate_gamma(calibration_reading(gamma, 0.5, 0.4), 0.5, 0.4)
        start = truth.with_texel(truth.texel_field.with_params(
            np.full_like(true_theta, 0.5) if init_theta is None else np.asarray(init_theta)))
        problem = FitProblem(obs, start, ("theta",), gamma=pinned, options=opts, saturation=np.inf)
        res = fit(problem, config)
        fitted = res.scene.texel_field.params()
        errs = _theta_errors(fitted, true_theta)
        reports.append(RatioReport(ratio, gamma, kappa, True, errs,
                                   {n: float(x) for n, x in zip(brdf.PARAM_NAMES, fitted[:9])},
                                   float(np.mean(res.history[-50:])) if res.history else None))
    return reports


def _noisy(img, sigma, clip, rng):
    out = img + sigma * np.sqrt(np.maximum(img, 0.0)) * rng.standard_normal(img.shape) if sigma > 0 else img.copy()
    if clip is not None:
        out = np.minimum(out, clip)
    return out


def _theta_errors(fitted, truth) -> dict:
    f = np.asarray(fitted)[:9]
    t = np.asarray(truth)[:9]
    return {"base_color": float(np.max(np.abs(f[:3] - t[:3]))),
            "roughness": float(abs(f[brdf.ROUGHNESS] - t[brdf.ROUGHNESS])),
            "metallic": float(abs(f[brdf.METALLIC] - t[brdf.METALLIC]))}
