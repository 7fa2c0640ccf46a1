"""Texture baking onto the per-triangle atlas."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .atlas import Atlas

SCALAR_CHANNELS = {
    "roughness": 3,
    "clearcoat_glossiness": 4,
    "subsurface": 5,
    "metallic": 6,
    "dielectric": 7,
    "clearcoat": 8,
}


@dataclass
class PbrTextureSet:
    """Linear maps in [0, 1] sharing one resolution; normals are object-space unit vectors."""

    base_color: np.ndarray                     # (R, R, 3)
    scalars: dict[str, np.ndarray]             # name -> (R, R)
    normal: np.ndarray                         # (R, R, 3)
    valid: np.ndarray | None = field(default=None)

    def __post_init__(self):
        shape = self.base_color.shape[:2]
        if self.normal.shape[:2] != shape or any(m.shape != shape for m in self.scalars.values()):
            raise ValueError("all texture rasters must share one resolution")

    @property
    def resolution(self) -> int:
        return self.base_color.shape[0]

    def theta_at(self, rows, cols) -> np.ndarray:
        """Stacked Theta vectors (N, 9) at integer texel coordinates."""
        out = np.zeros((len(rows), 9))
        out[:, :3] = self.base_color[rows, cols]
        for name, k in SCALAR_CHANNELS.items():
            out[:, k] = self.scalars[name][rows, cols]
        return out


def _fill_gutters(img: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Copy every invalid texel from its nearest valid texel."""
    if valid.all() or not valid.any():
        return img
    _, (iy, ix) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return img[iy, ix]


def bake_textures(scene, atlas: Atlas, chunk: int = 1 << 16) -> PbrTextureSet:
    """Evaluate Theta and the SDF normal at every valid atlas texel."""
    R = atlas.resolution
    yy, xx = np.nonzero(atlas.valid)
    pts = atlas.points[yy, xx]
    theta = np.empty((len(pts), 9))
    normals = np.empty((len(pts), 3))
    for i in range(0, len(pts), chunk):
        p = pts[i:i + chunk]
        theta[i:i + chunk] = scene.sample_texel(p)
        n, bad = scene.normals(p)
        if np.any(bad):
            # fall back to the radial direction from the ROI centre
            r = p[bad] - scene.roi_center
            n[bad] = r / np.maximum(np.linalg.norm(r, axis=1, keepdims=True), 1e-300)
        normals[i:i + chunk] = n

    theta_img = np.zeros((R, R, 9))
    theta_img[yy, xx] = np.clip(theta, 0.0, 1.0)
    normal_img = np.zeros((R, R, 3))
    normal_img[yy, xx] = normals
    theta_img = _fill_gutters(theta_img, atlas.valid)
    normal_img = _fill_gutters(normal_img, atlas.valid)
    return PbrTextureSet(
        base_color=theta_img[..., :3],
        scalars={name: theta_img[..., k] for name, k in SCALAR_CHANNELS.items()},
        normal=normal_img,
        valid=atlas.valid.copy(),
    )


def encode_normals(n) -> np.ndarray:
    return (np.asarray(n, dtype=np.float64) + 1.0) * 0.5


def decode_normals(enc) -> np.ndarray:
    return np.asarray(enc, dtype=np.float64) * 2.0 - 1.0
