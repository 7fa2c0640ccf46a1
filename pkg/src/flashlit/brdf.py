"""Principled BRDF restricted to opaque materials.

Two evaluators live here:

* the co-located form (light and view share one direction ``h``), used for the
  flashlight term, together with hand-derived partials w.r.t. every textel
  parameter and the shading cosine;
* a bidirectional generalisation (``n``, ``v``, ``l``) used to shade the
  ambient term.  At ``l == v`` it reduces to the co-located form.

Textel parameters are packed as ``(..., 9)`` arrays in the order
``[r, g, b, roughness, clearcoat_glossiness, subsurface, metallic,
dielectric, clearcoat]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_COS = 1e-4
ROUGHNESS_FLOOR = 1e-3
CLEARCOAT_G_ALPHA2 = 0.25**2
CLEARCOAT_FRESNEL = 0.2
NORM_TOL = 1e-6

BASE_COLOR = slice(0, 3)
ROUGHNESS = 3
CLEARCOAT_GLOSSINESS = 4
SUBSURFACE = 5
METALLIC = 6
DIELECTRIC = 7
CLEARCOAT = 8
N_PARAMS = 9

PARAM_NAMES = (
    "base_color_r",
    "base_color_g",
    "base_color_b",
    "roughness",
    "clearcoat_glossiness",
    "subsurface",
    "metallic",
    "dielectric",
    "clearcoat",
)


@dataclass(frozen=True)
class TextelParams:
    """Reflectance parameters of one surface point."""

    base_color: tuple[float, float, float] = (0.5, 0.5, 0.5)
    roughness: float = 0.5
    clearcoat_glossiness: float = 0.5
    subsurface: float = 0.0
    metallic: float = 0.0
    dielectric: float = 0.0
    clearcoat: float = 0.0

    def __post_init__(self):
        arr = self.as_array()
        if arr.shape != (N_PARAMS,) or not np.all(np.isfinite(arr)):
            raise ValueError("textel parameters must be 9 finite values")
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValueError(f"textel parameters outside [0, 1]: {arr}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                *self.base_color,
                self.roughness,
                self.clearcoat_glossiness,
                self.subsurface,
                self.metallic,
                self.dielectric,
                self.clearcoat,
            ],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, arr) -> "TextelParams":
        a = np.asarray(arr, dtype=np.float64).reshape(N_PARAMS)
        return cls(tuple(float(x) for x in a[:3]), *(float(x) for x in a[3:]))

    @property
    def clearcoat_roughness(self) -> float:
        return clearcoat_roughness(self.clearcoat_glossiness)

    def to_dict(self) -> dict:
        return {
            "base_color": list(self.base_color),
            "roughness": self.roughness,
            "clearcoat_glossiness": self.clearcoat_glossiness,
            "subsurface": self.subsurface,
            "metallic": self.metallic,
            "dielectric": self.dielectric,
            "clearcoat": self.clearcoat,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TextelParams":
        return cls(
            base_color=tuple(float(x) for x in d.get("base_color", (0.5, 0.5, 0.5))),
            roughness=float(d.get("roughness", 0.5)),
            clearcoat_glossiness=float(d.get("clearcoat_glossiness", 0.5)),
            subsurface=float(d.get("subsurface", 0.0)),
            metallic=float(d.get("metallic", 0.0)),
            dielectric=float(d.get("dielectric", 0.0)),
            clearcoat=float(d.get("clearcoat", 0.0)),
        )


@dataclass(frozen=True)
class ShadingGeom:
    """Unit normal ``n`` and joint view/light direction ``h`` (batched allowed)."""

    n: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n, dtype=np.float64)
        h = np.asarray(self.h, dtype=np.float64)
        if n.shape[-1] != 3 or h.shape[-1] != 3:
            raise ValueError("n and h must have a trailing dimension of 3")
        for name, vec in (("n", n), ("h", h)):
            if np.any(np.abs(np.linalg.norm(vec, axis=-1) - 1.0) > NORM_TOL):
                raise ValueError(f"{name} is not normalized")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "h", h)

    @property
    def cos_nh(self) -> np.ndarray:
        return np.clip(np.sum(self.n * self.h, axis=-1), EPS_COS, 1.0)

    @classmethod
    def from_cos(cls, cos_nh) -> "ShadingGeom":
        """Geometry with ``n = +z`` and ``h`` tilted to the requested cosine."""
        c = np.clip(np.asarray(cos_nh, dtype=np.float64), -1.0, 1.0)
        s = np.sqrt(1.0 - c * c)
        n = np.broadcast_to(np.array([0.0, 0.0, 1.0]), c.shape + (3,))
        h = np.stack([s, np.zeros_like(c), c], axis=-1)
        return cls(n, h)


def clearcoat_roughness(glossiness):
    return 0.1 - 0.099 * np.asarray(glossiness, dtype=np.float64)


def _as_theta(theta) -> np.ndarray:
    if isinstance(theta, TextelParams):
        return theta.as_array()
    arr = np.asarray(theta, dtype=np.float64)
    if arr.shape[-1] != N_PARAMS:
        raise ValueError(f"theta must have trailing dimension {N_PARAMS}")
    return arr


def _check_theta(theta: np.ndarray) -> None:
    if not np.all(np.isfinite(theta)) or np.any(theta < 0.0) or np.any(theta > 1.0):
        raise ValueError("textel parameters outside [0, 1]")


# --- microfacet building blocks -------------------------------------------
# Each returns (value, d/dcos, d/dalpha2) with alpha2 = roughness**4.


def _ggx_d(c, a):
    # (a - 1) c^2 + 1 written without the cancellation near c = 1
    e = a * c * c + (1.0 - c) * (1.0 + c)
    d = a / (np.pi * e * e)
    dd_dc = -4.0 * a * (a - 1.0) * c / (np.pi * e**3)
    dd_da = 1.0 / (np.pi * e * e) - 2.0 * a * c * c / (np.pi * e**3)
    return d, dd_dc, dd_da


def _smith_g1(c, a):
    t = (1.0 - c) * (1.0 + c) / (c * c)
    q = np.sqrt(1.0 + a * t)
    g = 2.0 / (q + 1.0)
    k = -1.0 / (q * (q + 1.0) ** 2)
    dg_dc = k * a * (-2.0 / c**3)
    dg_da = k * t
    return g, dg_dc, dg_da


def _gtr1(c, rc):
    """Berry distribution; returns (value, d/dcos, d/drc)."""
    q = rc * rc - 1.0
    lg = np.log(rc)
    e = rc * rc * c * c + (1.0 - c) * (1.0 + c)
    den = 2.0 * np.pi * lg * e
    d = q / den
    dd_dc = -q * q * c / (np.pi * lg * e * e)
    dq = 2.0 * rc
    dden = 2.0 * np.pi * ((1.0 / rc) * e + lg * c * c * dq)
    dd_drc = (dq * den - q * dden) / (den * den)
    return d, dd_dc, dd_drc


def _alpha2(roughness):
    r = np.maximum(roughness, ROUGHNESS_FLOOR)
    return r**4, np.where(roughness > ROUGHNESS_FLOOR, 4.0 * r**3, 0.0)


# --- co-located lobes -------------------------------------------------------


def _cos_of(geom) -> np.ndarray:
    if isinstance(geom, ShadingGeom):
        return geom.cos_nh
    return np.clip(np.asarray(geom, dtype=np.float64), EPS_COS, 1.0)


def eval_diffuse_lobes(geom, theta) -> np.ndarray:
    """Base diffuse and subsurface lobes blended by ``subsurface``."""
    c = _cos_of(geom)
    th = _as_theta(theta)
    base, sub = _diffuse_parts(c, th)
    ss = th[..., SUBSURFACE, None]
    return (1.0 - ss) * base + ss * sub


def _diffuse_parts(c, th):
    b = th[..., BASE_COLOR]
    r = th[..., ROUGHNESS]
    u5 = (1.0 - c) ** 5
    retro = (1.0 + (2.0 * r - 0.5) * u5) ** 2
    inner = (1.0 + (r - 1.0) * u5) ** 2 * (1.0 / c - 1.0) + 1.0
    base = b / np.pi * retro[..., None]
    sub = 1.25 * b / (2.0 * np.pi) * inner[..., None]
    return base, sub


def eval_ggx_specular(geom, theta, fresnel) -> np.ndarray:
    """GGX lobe ``D G F / (4 cos^2)``; ``fresnel`` is base_color or 1."""
    c = _cos_of(geom)
    th = _as_theta(theta)
    a, _ = _alpha2(th[..., ROUGHNESS])
    d, _, _ = _ggx_d(c, a)
    g, _, _ = _smith_g1(c, a)
    return (d * g / (4.0 * c * c))[..., None] * np.asarray(fresnel, dtype=np.float64)


def eval_clearcoat(geom, theta) -> np.ndarray:
    """Achromatic clearcoat lobe (scalar per point)."""
    c = _cos_of(geom)
    th = _as_theta(theta)
    rc = clearcoat_roughness(th[..., CLEARCOAT_GLOSSINESS])
    dc, _, _ = _gtr1(c, rc)
    gc, _, _ = _smith_g1(c, CLEARCOAT_G_ALPHA2)
    return dc * gc * CLEARCOAT_FRESNEL / (4.0 * c * c)


def eval_brdf(geom, theta, validate: bool = True) -> np.ndarray:
    """Co-located principled BRDF, RGB per steradian.

    ``geom`` is a :class:`ShadingGeom` or an array of cosines ``n . h``.
    """
    th = _as_theta(theta)
    if validate:
        _check_theta(th)
    return _colocated(_cos_of(geom), th)[0]


def _colocated(c, th, want_grad=False):
    b = th[..., BASE_COLOR]
    r = th[..., ROUGHNESS]
    gl = th[..., CLEARCOAT_GLOSSINESS]
    ss = th[..., SUBSURFACE, None]
    m = th[..., METALLIC, None]
    di = th[..., DIELECTRIC, None]
    cc = th[..., CLEARCOAT, None]

    u = 1.0 - c
    u4 = u**4
    u5 = u4 * u
    kr = 2.0 * r - 0.5
    A = 1.0 + kr * u5
    B = 1.0 + (r - 1.0) * u5
    inv_c = 1.0 / c
    base_s = A * A / np.pi
    sub_s = 1.25 / (2.0 * np.pi) * (B * B * (inv_c - 1.0) + 1.0)
    diff_s = (1.0 - ss[..., 0]) * base_s + ss[..., 0] * sub_s
    diffuse = b * diff_s[..., None]

    a, da_dr = _alpha2(r)
    D, dD_dc, dD_da = _ggx_d(c, a)
    G, dG_dc, dG_da = _smith_g1(c, a)
    c2 = c * c
    S = D * G / (4.0 * c2)

    rc = clearcoat_roughness(gl)
    Dc, dDc_dc, dDc_drc = _gtr1(c, rc)
    Gc, dGc_dc, _ = _smith_g1(c, CLEARCOAT_G_ALPHA2)
    CC = Dc * Gc * CLEARCOAT_FRESNEL / (4.0 * c2)

    spec_w = m * b + 0.08 * (1.0 - m) * di
    rho = (1.0 - m) * diffuse + spec_w * S[..., None] + 0.25 * cc * CC[..., None]
    if not want_grad:
        return rho, None, None

    shape = rho.shape
    dth = np.zeros(shape + (N_PARAMS,))
    eye = np.eye(3)
    dth[..., BASE_COLOR] = ((1.0 - m) * diff_s[..., None] + m * S[..., None])[..., None] * eye
    d_base_dr = 2.0 * A * 2.0 * u5 / np.pi
    d_sub_dr = 1.25 / (2.0 * np.pi) * 2.0 * B * u5 * (inv_c - 1.0)
    d_diff_dr = (1.0 - ss[..., 0]) * d_base_dr + ss[..., 0] * d_sub_dr
    dS_da = (dD_da * G + D * dG_da) / (4.0 * c2)
    dth[..., ROUGHNESS] = (1.0 - m) * b * d_diff_dr[..., None] + spec_w * (dS_da * da_dr)[..., None]
    dCC_dg = dDc_drc * (-0.099) * Gc * CLEARCOAT_FRESNEL / (4.0 * c2)
    dth[..., CLEARCOAT_GLOSSINESS] = 0.25 * cc * dCC_dg[..., None]
    dth[..., SUBSURFACE] = (1.0 - m) * b * (sub_s - base_s)[..., None]
    dth[..., METALLIC] = -diffuse + b * S[..., None] - 0.08 * di * S[..., None]
    dth[..., DIELECTRIC] = np.broadcast_to(0.08 * (1.0 - m) * S[..., None], shape)
    dth[..., CLEARCOAT] = np.broadcast_to(0.25 * CC[..., None], shape)

    dA_dc = -5.0 * kr * u4
    dB_dc = -5.0 * (r - 1.0) * u4
    d_base_dc = 2.0 * A * dA_dc / np.pi
    d_sub_dc = 1.25 / (2.0 * np.pi) * (2.0 * B * dB_dc * (inv_c - 1.0) - B * B * inv_c * inv_c)
    d_diff_dc = (1.0 - ss[..., 0]) * d_base_dc + ss[..., 0] * d_sub_dc
    dS_dc = (dD_dc * G + D * dG_dc) / (4.0 * c2) - 2.0 * S / c
    dCC_dc = (dDc_dc * Gc + Dc * dGc_dc) * CLEARCOAT_FRESNEL / (4.0 * c2) - 2.0 * CC / c
    dc = (1.0 - m) * b * d_diff_dc[..., None] + spec_w * dS_dc[..., None] + 0.25 * cc * dCC_dc[..., None]
    return rho, dth, dc


def brdf_gradient(geom, theta, validate: bool = True):
    """Analytic partials of :func:`eval_brdf`.

    Returns ``(d_theta, d_cos)`` with shapes ``(..., 3, 9)`` and ``(..., 3)``;
    ``d_cos`` is zero where the cosine clamp is active.
    """
    th = _as_theta(theta)
    if validate:
        _check_theta(th)
    if isinstance(geom, ShadingGeom):
        raw = np.sum(geom.n * geom.h, axis=-1)
    else:
        raw = np.asarray(geom, dtype=np.float64)
    c = np.clip(raw, EPS_COS, 1.0)
    _, dth, dc = _colocated(c, th, want_grad=True)
    active = (raw > EPS_COS) & (raw < 1.0)
    dc = np.where(active[..., None], dc, 0.0)
    return dth, dc


def eval_brdf_with_gradient(cos_nh, theta):
    """Unvalidated fast path for the renderer: value and both partials."""
    raw = np.asarray(cos_nh, dtype=np.float64)
    c = np.clip(raw, EPS_COS, 1.0)
    rho, dth, dc = _colocated(c, theta, want_grad=True)
    active = (raw > EPS_COS) & (raw < 1.0)
    return rho, dth, np.where(active[..., None], dc, 0.0)


# --- bidirectional form (ambient shading) -----------------------------------


def eval_brdf_bidirectional(cos_l, cos_v, cos_h, theta, want_grad=False):
    """General-direction principled BRDF.

    Cosines are ``n.l``, ``n.v`` and ``n.h`` (``h`` the half vector).  The
    retro-reflection and subsurface factors keep the co-located coefficients
    ``2 r - 0.5`` and ``r - 1`` and apply one Schlick weight per direction;
    the specular mask-shadowing uses a single Smith term evaluated at the
    more grazing of ``l`` and ``v``.  Both choices make the result coincide
    with :func:`eval_brdf` when ``l == v``.

    With ``want_grad`` also returns ``(d_theta (...,3,9), d_cl, d_cv, d_ch)``
    where each cosine partial has shape ``(..., 3)``.
    """
    th = np.asarray(theta, dtype=np.float64)
    raw = [np.asarray(x, dtype=np.float64) for x in (cos_l, cos_v, cos_h)]
    cl, cv, ch = (np.clip(x, EPS_COS, 1.0) for x in raw)

    b = th[..., BASE_COLOR]
    r = th[..., ROUGHNESS]
    gl = th[..., CLEARCOAT_GLOSSINESS]
    ss = th[..., SUBSURFACE]
    m = th[..., METALLIC, None]
    di = th[..., DIELECTRIC, None]
    cc = th[..., CLEARCOAT, None]

    ul = 1.0 - cl
    uv = 1.0 - cv
    fl = ul**5
    fv = uv**5
    X = 2.0 * r - 0.5
    Pl = 1.0 + X * fl
    Pv = 1.0 + X * fv
    base_s = Pl * Pv / np.pi
    Y = r - 1.0
    Ql = 1.0 + Y * fl
    Qv = 1.0 + Y * fv
    Fss = Ql * Qv
    sl = cl + cv
    W = 1.0 / sl - 0.5
    sub_s = 1.25 / np.pi * (Fss * W + 0.5)
    diff_s = (1.0 - ss) * base_s + ss * sub_s
    diffuse = b * diff_s[..., None]

    a, da_dr = _alpha2(r)
    cm = np.minimum(cl, cv)
    D, dD_dc, dD_da = _ggx_d(ch, a)
    G, dG_dc, dG_da = _smith_g1(cm, a)
    den = 4.0 * cl * cv
    S = D * G / den

    rc = clearcoat_roughness(gl)
    Dc, dDc_dc, dDc_drc = _gtr1(ch, rc)
    Gc, dGc_dc, _ = _smith_g1(cm, CLEARCOAT_G_ALPHA2)
    CC = Dc * Gc * CLEARCOAT_FRESNEL / den

    spec_w = m * b + 0.08 * (1.0 - m) * di
    rho = (1.0 - m) * diffuse + spec_w * S[..., None] + 0.25 * cc * CC[..., None]
    if not want_grad:
        return rho

    shape = rho.shape
    dth = np.zeros(shape + (N_PARAMS,))
    dth[..., BASE_COLOR] = ((1.0 - m) * diff_s[..., None] + m * S[..., None])[..., None] * np.eye(3)
    d_base_dr = 2.0 * (fl * Pv + fv * Pl) / np.pi
    d_sub_dr = 1.25 / np.pi * W * (fl * Qv + fv * Ql)
    d_diff_dr = (1.0 - ss) * d_base_dr + ss * d_sub_dr
    dS_da = (dD_da * G + D * dG_da) / den
    dth[..., ROUGHNESS] = (1.0 - m) * b * d_diff_dr[..., None] + spec_w * (dS_da * da_dr)[..., None]
    dCC_dg = dDc_drc * (-0.099) * Gc * CLEARCOAT_FRESNEL / den
    dth[..., CLEARCOAT_GLOSSINESS] = 0.25 * cc * dCC_dg[..., None]
    dth[..., SUBSURFACE] = (1.0 - m) * b * (sub_s - base_s)[..., None]
    dth[..., METALLIC] = -diffuse + b * S[..., None] - 0.08 * di * S[..., None]
    dth[..., DIELECTRIC] = np.broadcast_to(0.08 * (1.0 - m) * S[..., None], shape)
    dth[..., CLEARCOAT] = np.broadcast_to(0.25 * CC[..., None], shape)

    # cosine partials of the diffuse part
    dfl = -5.0 * ul**4
    dfv = -5.0 * uv**4
    dbase_cl = X * dfl * Pv / np.pi
    dbase_cv = X * dfv * Pl / np.pi
    dW = -1.0 / (sl * sl)
    dsub_cl = 1.25 / np.pi * (Y * dfl * Qv * W + Fss * dW)
    dsub_cv = 1.25 / np.pi * (Y * dfv * Ql * W + Fss * dW)
    ddiff_cl = (1.0 - ss) * dbase_cl + ss * dsub_cl
    ddiff_cv = (1.0 - ss) * dbase_cv + ss * dsub_cv

    # the Smith term follows whichever cosine is smaller
    l_min = cl <= cv
    dS_cl = -S / cl + np.where(l_min, D * dG_dc / den, 0.0)
    dS_cv = -S / cv + np.where(l_min, 0.0, D * dG_dc / den)
    dS_ch = dD_dc * G / den
    dCC_cl = -CC / cl + np.where(l_min, Dc * dGc_dc * CLEARCOAT_FRESNEL / den, 0.0)
    dCC_cv = -CC / cv + np.where(l_min, 0.0, Dc * dGc_dc * CLEARCOAT_FRESNEL / den)
    dCC_ch = dDc_dc * Gc * CLEARCOAT_FRESNEL / den

    def combine(ddiff, dS, dCC):
        out = spec_w * dS[..., None] + 0.25 * cc * dCC[..., None]
        if ddiff is not None:
            out = out + (1.0 - m) * b * ddiff[..., None]
        return out

    d_cl = combine(ddiff_cl, dS_cl, dCC_cl)
    d_cv = combine(ddiff_cv, dS_cv, dCC_cv)
    d_ch = combine(None, dS_ch, dCC_ch)
    for d, x in ((d_cl, raw[0]), (d_cv, raw[1]), (d_ch, raw[2])):
        d *= ((x > EPS_COS) & (x < 1.0))[..., None]
    return rho, dth, d_cl, d_cv, d_ch
