"""Reconstruction and image-quality metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .hdr import HdrImage, _as_rgb
from .meshing.mesh import TriangleMesh

STOP_STD = 1e-5
MAX_PAIRS = 1_000_000
BATCH = 4096
PSNR_CAP = 100.0


# ---------------------------------------------------------------------------
# point-to-mesh distance


def closest_point_on_triangles(p, a, b, c):
    """Closest points on triangles ``(a, b, c)`` to points ``p`` (all ``(N, 3)``).

    Region classification on the Voronoi regions of vertices, edges and face.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def assign(mask, value):
        m = mask & ~done
        out[m] = value[m] if value.ndim == 2 else value
        done[m] = True

    assign((d1 <= 0) & (d2 <= 0), a)
    assign((d3 >= 0) & (d4 <= d3), b)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + t_ab[:, None] * ab)
        assign((d6 >= 0) & (d5 <= d6), c)
        t_ac = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + t_ac[:, None] * ac)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + t_bc[:, None] * (c - b))
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        assign(np.ones(len(p), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    return out


class MeshDistance:
    """Exact unsigned distance from points to a triangle mesh.

    Candidates come from a KD-tree over triangle centroids: once some
    triangle at distance ``d`` is known, only triangles whose centroid lies
    within ``d + r_max`` can be closer, where ``r_max`` bounds the
    centroid-to-vertex radius of every triangle.
    """

    def __init__(self, mesh: TriangleMesh, k: int = 8):
        if mesh.is_empty:
            raise ValueError("distance to an empty mesh is undefined")
        self.mesh = mesh
        self.tri = mesh.triangles()
        self.centroids = self.tri.mean(axis=1)
        self.r_max = float(np.linalg.norm(self.tri - self.centroids[:, None], axis=2).max())
        self.tree = cKDTree(self.centroids)
        self.k = min(k, len(self.centroids))

    def _exact(self, p, faces):
        t = self.tri[faces]
        q = closest_point_on_triangles(p, t[:, 0], t[:, 1], t[:, 2])
        return np.linalg.norm(p - q, axis=1)

    def query(self, points, return_face: bool = False):
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        _, idx = self.tree.query(p, k=self.k)
        idx = idx.reshape(len(p), -1)
        rep = np.repeat(p, idx.shape[1], axis=0)
        d = self._exact(rep, idx.ravel()).reshape(idx.shape)
        j = np.argmin(d, axis=1)
        best = d[np.arange(len(p)), j]
        face = idx[np.arange(len(p)), j]

        # exact pass: every centroid within best + r_max is a candidate
        lists = self.tree.query_ball_point(p, best + self.r_max)
        counts = np.fromiter((len(c) for c in lists), dtype=np.int64, count=len(p))
        need = counts > idx.shape[1]
        if np.any(need):
            rows = np.nonzero(need)[0]
            cand = np.concatenate([np.asarray(lists[i], dtype=np.int64) for i in rows])
            owner = np.repeat(rows, counts[rows])
            dc = self._exact(p[owner], cand)
            order = np.lexsort((dc, owner))
            first = np.ones(len(order), dtype=bool)
            first[1:] = owner[order][1:] != owner[order][:-1]
            sel = order[first]
            better = dc[sel] < best[owner[sel]]
            best[owner[sel][better]] = dc[sel][better]
            face[owner[sel][better]] = cand[sel][better]
        return (best, face) if return_face else best


def sample_surface(mesh: TriangleMesh, n: int, rng, faces=None) -> np.ndarray:
    """Area-uniform points on ``mesh`` (optionally restricted to ``faces``)."""
    tri = mesh.triangles() if faces is None else mesh.triangles()[faces]
    area = mesh.face_areas() if faces is None else mesh.face_areas()[faces]
    cdf = np.cumsum(area)
    pick = np.minimum(np.searchsorted(cdf, rng.uniform(0.0, cdf[-1], n), side="right"), len(cdf) - 1)
    u, v = rng.uniform(size=n), rng.uniform(size=n)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    t = tri[pick]
    return t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])


# ---------------------------------------------------------------------------
# visibility


def visible_faces(mesh: TriangleMesh, views, max_steps: int = 256, eps: float | None = None) -> np.ndarray:
    """Indices of faces hit first by at least one pixel ray of ``views``.

    Rays are sphere-traced against the mesh's unsigned distance; the face
    nearest the converged point is recorded.
    """
    from .renderer import generate_rays

    dist = MeshDistance(mesh)
    lo, hi = mesh.bounding_box()
    diag = float(np.linalg.norm(hi - lo))
    eps = 1e-4 * diag if eps is None else eps
    center = 0.5 * (lo + hi)
    seen = np.zeros(mesh.n_faces, dtype=bool)
    for view in views:
        o, d, _ = generate_rays(view, None)
        # start at the bounding sphere to save steps
        oc = o - center
        b = np.einsum("ij,ij->i", oc, d)
        disc = b * b - (np.einsum("ij,ij->i", oc, oc) - (0.5 * diag) ** 2)
        hit_bound = disc > 0
        t = np.maximum(-b - np.sqrt(np.maximum(disc, 0.0)), 0.0)
        t_far = -b + np.sqrt(np.maximum(disc, 0.0))
        active = hit_bound.copy()
        for _ in range(max_steps):
            if not active.any():
                break
            idx = np.nonzero(active)[0]
            p = o[idx] + t[idx, None] * d[idx]
            dd, face = dist.query(p, return_face=True)
            conv = dd < eps
            seen[face[conv]] = True
            t[idx] += dd
            active[idx[conv | (t[idx] > t_far[idx])]] = False
    return np.nonzero(seen)[0]


# ---------------------------------------------------------------------------
# distances


@dataclass
class SurfaceDistance:
    mean: float
    median: float
    std_of_mean: float
    n_pairs: int


def _rng_for(mesh: TriangleMesh, seed: int):
    return np.random.default_rng([seed, mesh.content_hash() & 0xFFFFFFFF, mesh.content_hash() >> 32])


def surface_distance(s1: TriangleMesh, s2: TriangleMesh, visibility=None, seed: int = 0,
                     tol: float = STOP_STD, max_pairs: int = MAX_PAIRS,
                     batch: int = BATCH, details: bool = False):
    """Commutative mesh-to-mesh distance ``(mean, median)``.

    Each pair draws one area-uniform point on each mesh and scores
    ``(d(x1, S2) + d(x2, S1)) / 2``.  Pairs accumulate in batches of
    ``batch`` until the standard deviation of the running mean drops to
    ``tol`` or ``max_pairs`` is reached.  The median pools the point
    distances from both directions.

    Every mesh draws its samples from a stream keyed by its own content, so
    swapping the arguments gives the identical result.
    """
    if s1.is_empty or s2.is_empty:
        raise ValueError("surface distance needs two non-empty meshes")
    f1 = f2 = None
    if visibility is not None:
        f1 = visible_faces(s1, visibility)
        f2 = visible_faces(s2, visibility)
        if f1.size == 0 or f2.size == 0:
            raise ValueError("no surface is visible from the given views")
    q1, q2 = MeshDistance(s1), MeshDistance(s2)
    r1, r2 = _rng_for(s1, seed), _rng_for(s2, seed)
    d12, d21 = [], []
    n = 0
    total = total_sq = 0.0
    std = np.inf
    while n < max_pairs:
        m = min(batch, max_pairs - n)
        a = q2.query(sample_surface(s1, m, r1, f1))
        b = q1.query(sample_surface(s2, m, r2, f2))
        d12.append(a)
        d21.append(b)
        pair = 0.5 * (a + b)
        n += m
        total += pair.sum()
        total_sq += np.square(pair).sum()
        mean = total / n
        var = max(total_sq / n - mean * mean, 0.0) * n / max(n - 1, 1)
        std = float(np.sqrt(var / n))
        if std <= tol:
            break
    pooled = np.concatenate(d12 + d21)
    out = SurfaceDistance(float(total / n), float(np.median(pooled)), std, n)
    return out if details else (out.mean, out.median)


def _angles(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a / np.maximum(np.linalg.norm(a, axis=-1, keepdims=True), 1e-300)
    b = b / np.maximum(np.linalg.norm(b, axis=-1, keepdims=True), 1e-300)
    return np.degrees(np.arccos(np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)))


def normal_error(pred, gt, valid=None):
    """Mean and median angle (degrees) between two normal rasters."""
    ang = _angles(pred, gt)
    if valid is not None:
        ang = ang[np.asarray(valid, dtype=bool)]
    ang = ang.ravel()
    if ang.size == 0:
        raise ValueError("no valid pixels")
    return float(ang.mean()), float(np.median(ang))


def depth_error(pred, gt, valid=None, object_length: float = 1.0):
    """Mean and median absolute depth error in units of 1e-3 object length."""
    if not object_length > 0:
        raise ValueError("object length must be positive")
    err = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64))
    if valid is not None:
        err = err[np.asarray(valid, dtype=bool)]
    err = err.ravel() / (object_length * 1e-3)
    if err.size == 0:
        raise ValueError("no valid pixels")
    return float(err.mean()), float(np.median(err))


def mesh_object_length(mesh: TriangleMesh) -> float:
    lo, hi = mesh.bounding_box()
    return float(np.linalg.norm(hi - lo))


def _unit_image(img) -> np.ndarray:
    if isinstance(img, HdrImage):
        img = img.rgb
    return np.clip(_as_rgb(img), 0.0, 1.0)


def psnr(pred, gt) -> float:
    mse = float(np.mean((_unit_image(pred) - _unit_image(gt)) ** 2))
    if mse <= 10.0 ** (-PSNR_CAP / 10.0):
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def ssim(pred, gt) -> float:
    from skimage.metrics import structural_similarity

    a, b = _unit_image(pred), _unit_image(gt)
    return float(structural_similarity(a, b, data_range=1.0, channel_axis=-1, gaussian_weights=True,
                                       sigma=1.5, use_sample_covariance=False))


def psnr_ssim(pred, gt):
    """PSNR (dB, capped at 100) and SSIM of images clipped to [0, 1]."""
    return psnr(pred, gt), ssim(pred, gt)


# ---------------------------------------------------------------------------
# report


@dataclass
class MetricReport:
    object_length: float | None = None
    distance_mean: float | None = None          # 1e-3 object length
    distance_median: float | None = None
    distance_mean_m: float | None = None        # meters
    distance_median_m: float | None = None
    normal_mean: float | None = None            # degrees
    normal_median: float | None = None
    depth_mean: float | None = None             # 1e-3 object length
    depth_median: float | None = None
    psnr: float | None = None
    ssim: float | None = None
    extra: dict = field(default_factory=dict)

    def set_distance(self, mean_m: float, median_m: float, object_length: float) -> None:
        self.object_length = object_length
        self.distance_mean_m = mean_m
        self.distance_median_m = median_m
        unit = object_length * 1e-3
        self.distance_mean = mean_m / unit
        self.distance_median = median_m / unit

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**d)

    def to_table(self) -> str:
        def fmt(x, spec=".3f"):
            return "-" if x is None else format(x, spec)

        header = ["", "Distance", "", "Normal (deg)", "", "Depth", "", "PSNR", "SSIM"]
        sub = ["", "mean", "median", "mean", "median", "mean", "median", "", ""]
        row = ["ours", fmt(self.distance_mean), fmt(self.distance_median), fmt(self.normal_mean),
               fmt(self.normal_median), fmt(self.depth_mean), fmt(self.depth_median),
               fmt(self.psnr, ".2f"), fmt(self.ssim, ".4f")]
        widths = [max(len(r[i]) for r in (header, sub, row)) for i in range(len(row))]
        lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in (header, sub, row)]
        lines.append("distances and depths in units of 1e-3 object length")
        return "\n".join(lines) + "\n"
