"""Capture datasets: manifest I/O, exposure handling, view sampling and synthesis."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .hdr import read_pfm, write_pfm
from .inverse import calibration_reading
from .photometry import EnvironmentMap, Flashlight
from .renderer import CaptureView, Intrinsics, RenderOptions, look_at, render_view
from .scene import SdfScene, load_scene, scene_to_dict

MANIFEST_VERSION = 1
# Flashlight power to intensity: 1 W gives gamma = 1 (radiance units at 1 m).
GAMMA_PER_WATT = 1.0

CONVENTIONS = {
    "camera": "pose is world-from-camera; camera looks down -Z with +Y up (OpenGL)",
    "coordinates": "right-handed, +Y up, meters",
    "exposure": "stored pixel = exposure_ratio * radiance; normalization divides by the ratio",
    "images": "PFM, little-endian float32, bottom-up rows",
}


def bundled_scene_path() -> Path:
    return Path(str(resources.files("flashlit") / "data" / "sphere_scene.json"))


# small protocol used for the checked-in reproducibility digest of the bundled scene
REFERENCE_SYNTH = {"n_views": 8, "width": 32, "height": 32, "n_samples": 64, "env_samples": 64}
REFERENCE_SEED = 0


def bundled_digest_path() -> Path:
    return Path(str(resources.files("flashlit") / "data" / "sphere_dataset.sha256"))


@dataclass
class ManifestEntry:
    image: str
    intrinsics: Intrinsics
    pose: np.ndarray
    flash: int
    exposure_ratio: float = 1.0
    mask: str | None = None

    def to_dict(self) -> dict:
        d = {
            "image": self.image,
            "intrinsics": self.intrinsics.to_dict(),
            "pose": np.asarray(self.pose, dtype=np.float64).tolist(),
            "flash": int(self.flash),
            "exposure_ratio": float(self.exposure_ratio),
        }
        if self.mask is not None:
            d["mask"] = self.mask
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        return cls(d["image"], Intrinsics.from_dict(d["intrinsics"]), np.asarray(d["pose"], dtype=np.float64),
                   int(d["flash"]), float(d.get("exposure_ratio", 1.0)), d.get("mask"))

    def view(self, gamma: float) -> CaptureView:
        return CaptureView(self.intrinsics, self.pose, Flashlight(gamma, self.flash))


@dataclass
class DatasetManifest:
    entries: list
    roi_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    roi_radius: float = 1.0
    gamma: float = 1.0
    scene: str | None = None
    environment: dict | None = None
    calibration: dict | None = None
    render: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.entries:
            raise ValueError("manifest lists no images")
        if not self.roi_radius > 0:
            raise ValueError("ROI radius must be positive")
        if not self.gamma > 0:
            raise ValueError("flashlight intensity must be positive")
        for i, e in enumerate(self.entries):
            if not e.exposure_ratio > 0:
                raise ValueError(f"entry {i}: exposure ratio must be positive")
            if e.flash not in (0, 1):
                raise ValueError(f"entry {i}: flash must be 0 or 1")
            e.view(self.gamma)  # checks the pose is a rigid transform

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "conventions": CONVENTIONS,
            "scene": self.scene,
            "roi": {"center": np.asarray(self.roi_center, dtype=np.float64).tolist(),
                    "radius": float(self.roi_radius)},
            "flashlight": {"gamma": float(self.gamma), "watts": float(self.gamma) / GAMMA_PER_WATT},
            "environment": self.environment,
            "calibration": self.calibration,
            "render": self.render,
            "meta": self.meta,
            "entries": [e.to_dict() for e in self.entries],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        if d.get("version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {d.get('version')!r}")
        m = cls(
            entries=[ManifestEntry.from_dict(e) for e in d["entries"]],
            roi_center=np.asarray(d["roi"]["center"], dtype=np.float64),
            roi_radius=float(d["roi"]["radius"]),
            gamma=float(d["flashlight"]["gamma"]),
            scene=d.get("scene"),
            environment=d.get("environment"),
            calibration=d.get("calibration"),
            render=d.get("render") or {},
            meta=d.get("meta") or {},
        )
        m.validate()
        return m

    def views(self) -> list:
        return [e.view(self.gamma) for e in self.entries]

    @property
    def n_flash(self) -> int:
        return sum(e.flash for e in self.entries)


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read manifest {path}: {exc}") from exc
    try:
        m = DatasetManifest.from_dict(d)
    except KeyError as exc:
        raise ValueError(f"manifest {path} lacks field {exc}") from exc
    for e in m.entries:
        for rel in (e.image, e.mask):
            if rel is not None and not (path.parent / rel).exists():
                raise ValueError(f"manifest references missing file {rel}")
    return m


def write_manifest(path, manifest: DatasetManifest) -> None:
    Path(path).write_text(manifest.dumps())


# ---------------------------------------------------------------------------
# in-memory datasets


@dataclass
class Dataset:
    manifest: DatasetManifest
    images: list
    masks: list
    env_data: np.ndarray | None = None

    def environment(self) -> EnvironmentMap | None:
        env = self.manifest.environment
        if env is None or self.env_data is None:
            return None
        return EnvironmentMap(self.env_data, int(env.get("n_samples", 256)), int(env.get("seed", 0)))


def load_dataset(path) -> tuple[Dataset, Path]:
    """Manifest plus its images; returns the dataset and its root directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    m = read_manifest(path)
    root = path.parent
    images = [read_pfm(root / e.image) for e in m.entries]
    masks = []
    for e in m.entries:
        if e.mask is None:
            masks.append(None)
        else:
            from .hdr import read_png

            masks.append(read_png(root / e.mask) > 0.5)
    for e, img in zip(m.entries, images):
        K = e.intrinsics
        if img.shape[:2] != (K.height, K.width):
            raise ValueError(f"image {e.image} does not match its intrinsics")
    env_data = None
    if m.environment is not None:
        env_file = root / m.environment["file"]
        if not env_file.exists():
            raise ValueError(f"manifest references missing file {m.environment['file']}")
        env_data = read_pfm(env_file)
    return Dataset(m, images, masks, env_data), root


def normalize_exposure(ds: Dataset) -> Dataset:
    """Bring every image to the unified radiance scale.

    Each image is divided by its exposure ratio and the ratio is rewritten
    to 1, so a second application changes nothing.
    """
    images, entries = [], []
    for e, img in zip(ds.manifest.entries, ds.images):
        r = e.exposure_ratio
        images.append(img if r == 1.0 else np.asarray(img, dtype=np.float64) / r)
        entries.append(replace(e, exposure_ratio=1.0))
    return Dataset(replace(ds.manifest, entries=entries), images, list(ds.masks), ds.env_data)


# ---------------------------------------------------------------------------
# view sampling


def dome_positions(n: int, rng, distance=(0.3, 0.5), elevation_deg=(5.0, 85.0), center=(0.0, 0.0, 0.0)):
    """Area-uniform camera centres on the upper half dome (``+Y``)."""
    lo, hi = (math.sin(math.radians(a)) for a in elevation_deg)
    y = rng.uniform(lo, hi, n)
    phi = rng.uniform(0.0, 2.0 * math.pi, n)
    r = rng.uniform(distance[0], distance[1], n)
    ring = np.sqrt(1.0 - y * y)
    d = np.stack([ring * np.sin(phi), y, ring * np.cos(phi)], axis=1)
    return np.asarray(center) + r[:, None] * d


def spiral_positions(n: int, rng, distance=(0.3, 0.5), elevation_deg=(5.0, 85.0), turns: float = 3.0,
                     center=(0.0, 0.0, 0.0)):
    """Camera centres along a rising spiral; azimuth increases monotonically."""
    s = (np.arange(n) + 0.5) / n
    phi = 2.0 * math.pi * turns * s
    elev = np.radians(elevation_deg[0] + (elevation_deg[1] - elevation_deg[0]) * s)
    r = distance[0] + (distance[1] - distance[0]) * rng.uniform(size=n)
    d = np.stack([np.cos(elev) * np.sin(phi), np.sin(elev), np.cos(elev) * np.cos(phi)], axis=1)
    return np.asarray(center) + r[:, None] * d, phi


def azimuths(positions, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    p = np.asarray(positions) - np.asarray(center)
    return np.unwrap(np.arctan2(p[:, 0], p[:, 2]))


def _up_for(eye, target):
    fwd = np.asarray(target) - np.asarray(eye)
    fwd = fwd / np.linalg.norm(fwd)
    return (0.0, 0.0, -1.0) if abs(fwd[1]) > 0.999 else (0.0, 1.0, 0.0)


# ---------------------------------------------------------------------------
# synthesis


@dataclass
class SynthConfig:
    n_views: int = 150
    flash_fraction: float = 0.5
    width: int = 64
    height: int = 64
    fov_deg: float = 45.0
    distance: tuple = (0.3, 0.5)
    elevation_deg: tuple = (5.0, 85.0)
    trajectory: str = "dome"          # or "spiral"
    watts: float = 0.5
    environment: str | float | None = "sky"  # "sky", a constant radiance, or None (darkroom)
    env_scale: float = 0.3
    env_samples: int = 256
    auto_exposure: bool = True
    exposure_target: float = 0.5
    n_samples: int = 128
    noise: float = 0.0
    calibration_albedo: float = 0.5
    calibration_distance: float = 0.4

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown synth option(s): {', '.join(sorted(bad))}")
        d = dict(d)
        for k in ("distance", "elevation_deg"):
            if k in d:
                d[k] = tuple(d[k])
        cfg = cls(**d)
        if cfg.n_views < 1 or not 0.0 <= cfg.flash_fraction <= 1.0:
            raise ValueError("need at least one view and a flash fraction in [0, 1]")
        if cfg.trajectory not in ("dome", "spiral"):
            raise ValueError("trajectory must be 'dome' or 'spiral'")
        if not cfg.watts > 0:
            raise ValueError("flashlight power must be positive")
        return cfg

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["distance"] = list(self.distance)
        d["elevation_deg"] = list(self.elevation_deg)
        return d


def sky_environment(scale: float = 0.3, size=(16, 32)) -> np.ndarray:
    """Smooth sky: brighter overhead, dimmer toward the ground, slight warm tint."""
    h, w = size
    theta = (np.arange(h) + 0.5) / h * math.pi
    up = np.cos(theta)[:, None, None]
    base = 0.55 + 0.45 * up
    tint = np.array([1.0, 0.95, 0.9])
    return np.broadcast_to(scale * base * tint, (h, w, 3)).copy()


def _exposure_ratio(radiance: np.ndarray, target: float) -> float:
    peak = float(np.percentile(radiance, 99.0))
    if peak <= 0.0:
        return 1.0
    # whole photographic stops keep the round trip exact in floating point
    return float(2.0 ** round(math.log2(target / peak)))


def synthesize(scene: SdfScene, config: SynthConfig, seed: int = 0, threads: int = 1,
               scene_ref: str | None = None) -> Dataset:
    rng = np.random.default_rng(seed)
    c = scene.roi_center
    if config.trajectory == "spiral":
        eyes, _ = spiral_positions(config.n_views, rng, config.distance, config.elevation_deg, center=c)
    else:
        eyes = dome_positions(config.n_views, rng, config.distance, config.elevation_deg, center=c)
    n_flash = int(round(config.flash_fraction * config.n_views))
    flash = np.zeros(config.n_views, dtype=int)
    flash[rng.permutation(config.n_views)[:n_flash]] = 1
    gamma = config.watts * GAMMA_PER_WATT
    K = Intrinsics.from_fov(config.width, config.height, config.fov_deg)

    env = None
    env_meta = None
    if config.environment is not None:
        if config.environment == "sky":
            data = sky_environment(config.env_scale)
        else:
            data = np.full((8, 16, 3), float(config.environment))
        # stored as float32 PFM; render with exactly what a reader gets back
        env = EnvironmentMap(data.astype(np.float32).astype(np.float64), config.env_samples, seed)
        env_meta = {"file": "environment.pfm", "n_samples": config.env_samples, "seed": int(seed)}

    opts = RenderOptions(n_samples=config.n_samples, seed=seed, threads=threads,
                         background="env" if env is not None else "none")
    entries, images, masks = [], [], []
    for i, eye in enumerate(eyes):
        pose = look_at(eye, c, _up_for(eye, c))
        view = CaptureView(K, pose, Flashlight(gamma, int(flash[i])))
        res = render_view(scene, view, env, replace(opts, seed=seed * 100003 + i))
        img = res.rgb
        if config.noise > 0:
            nrng = np.random.default_rng([seed, i])
            img = img + config.noise * np.sqrt(np.maximum(img, 0.0)) * nrng.standard_normal(img.shape)
            img = np.maximum(img, 0.0)
        ratio = _exposure_ratio(img, config.exposure_target) if config.auto_exposure else 1.0
        images.append(img * ratio)
        masks.append(res.alpha > 0.5)
        entries.append(ManifestEntry(f"images/{i:04d}.pfm", K, pose, int(flash[i]), ratio,
                                     f"masks/{i:04d}.png"))

    calib = {
        "albedo": config.calibration_albedo,
        "distance": config.calibration_distance,
        "reading": calibration_reading(gamma, config.calibration_albedo,
                                       config.calibration_distance).tolist(),
    }
    manifest = DatasetManifest(
        entries=entries, roi_center=c, roi_radius=scene.roi_radius, gamma=gamma, scene=scene_ref,
        environment=env_meta, calibration=calib, render=opts.to_dict(),
        meta={"seed": int(seed), "synth": config.to_dict()},
    )
    return Dataset(manifest, images, masks, None if env is None else env.data)


def save_dataset(ds: Dataset, out_dir, scene: SdfScene | None = None) -> Path:
    from .hdr import write_png8

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for e, img, mask in zip(ds.manifest.entries, ds.images, ds.masks):
        write_pfm(out / e.image, img)
        if e.mask is not None and mask is not None:
            write_png8(out / e.mask, mask.astype(np.float64))
    if ds.manifest.environment is not None and ds.env_data is not None:
        write_pfm(out / ds.manifest.environment["file"], ds.env_data)
    if scene is not None:
        (out / "scene.json").write_text(json.dumps(scene_to_dict(scene, out, "scene"), indent=2) + "\n")
    write_manifest(out / "manifest.json", ds.manifest)
    return out / "manifest.json"


def directory_digest(root) -> str:
    """SHA-256 over every file below ``root`` (sorted relative paths and bytes)."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()


def load_scene_ref(manifest: DatasetManifest, root) -> SdfScene | None:
    if manifest.scene is None:
        return None
    return load_scene(Path(root) / manifest.scene)
