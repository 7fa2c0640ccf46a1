"""HDR rasters: PFM interchange, PNG previews and tone mapping."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass
class HdrImage:
    """Linear radiance raster ``(H, W, 3)`` with an optional validity mask."""

    rgb: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) radiance, got {self.rgb.shape}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask)
            if self.mask.shape != self.rgb.shape[:2]:
                raise ValueError("mask must match the image resolution")

    @property
    def shape(self):
        return self.rgb.shape[:2]


def _as_rgb(img) -> np.ndarray:
    return img.rgb if isinstance(img, HdrImage) else np.asarray(img, dtype=np.float64)


def write_pfm(path, data) -> None:
    """Little-endian PFM; rows are stored bottom-up as the format requires."""
    data = np.asarray(data, dtype="<f4")
    if data.ndim == 3 and data.shape[2] == 3:
        tag = b"PF"
    elif data.ndim == 2:
        tag = b"Pf"
    else:
        raise ValueError(f"PFM needs (H, W) or (H, W, 3), got {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        f.write(np.ascontiguousarray(np.flipud(data)).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag not in (b"PF", b"Pf"):
            raise ValueError(f"{path} is not a PFM file")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        ch = 3 if tag == b"PF" else 1
        buf = np.frombuffer(f.read(w * h * ch * 4), dtype=dtype)
    if buf.size != w * h * ch:
        raise ValueError(f"truncated PFM file {path}")
    img = buf.reshape((h, w, ch) if ch == 3 else (h, w))
    return np.flipud(img).astype(np.float64)


def srgb_encode(linear) -> np.ndarray:
    x = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def srgb_decode(encoded) -> np.ndarray:
    x = np.clip(np.asarray(encoded, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def tonemap(rgb, gamma: float = 2.2) -> np.ndarray:
    """Reinhard ``x / (1 + x)`` followed by a display gamma; returns [0, 1]."""
    x = np.maximum(_as_rgb(rgb), 0.0)
    return np.power(x / (1.0 + x), 1.0 / gamma)


def to_uint8(x) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png8(path, data) -> None:
    Image.fromarray(to_uint8(data)).save(path)


def read_png(path) -> np.ndarray:
    """Returns values scaled to [0, 1], 8- or 16-bit sources alike."""
    import cv2

    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValueError(f"cannot read PNG {path}")
    if raw.ndim == 3:
        raw = raw[..., ::-1]
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    return raw.astype(np.float64) / scale


def write_png16(path, data) -> None:
    """16-bit PNG (gray or RGB) from values in [0, 1]."""
    import cv2

    q = np.round(np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0) * 65535.0).astype(np.uint16)
    if q.ndim == 3:
        q = np.ascontiguousarray(q[..., ::-1])
    if not cv2.imwrite(str(path), q):
        raise OSError(f"failed to write {path}")


def save_preview(path, img) -> None:
    write_png8(Path(path), tonemap(img))
