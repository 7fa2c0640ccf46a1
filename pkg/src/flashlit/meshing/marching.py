"""Vectorised marching cubes over a sampled signed distance field."""

from __future__ import annotations

import numpy as np

from ._tables import CORNERS, EDGES, TRI_TABLE
from .mesh import TriangleMesh

_CORNERS = np.array(CORNERS, dtype=np.int64)
_EDGES = np.array(EDGES, dtype=np.int64)
_TRI = np.full((256, 16), -1, dtype=np.int64)
for _case, _tri in enumerate(TRI_TABLE):
    _TRI[_case, :len(_tri)] = _tri
_N_TRI = (_TRI >= 0).sum(axis=1) // 3

# each cube edge as (start-corner offset, axis)
_EDGE_AXIS = np.argmax(np.abs(_CORNERS[_EDGES[:, 1]] - _CORNERS[_EDGES[:, 0]]), axis=1)
_EDGE_BASE = np.minimum(_CORNERS[_EDGES[:, 0]], _CORNERS[_EDGES[:, 1]])


def grid_points(center, half_width: float, resolution: int):
    """Node coordinates of a cube grid with ``resolution`` nodes per axis."""
    axis = np.linspace(-half_width, half_width, resolution)
    c = np.asarray(center, dtype=np.float64)
    return [c[i] + axis for i in range(3)], axis[1] - axis[0]


def sample_grid(scene, resolution: int, chunk: int = 1 << 18):
    """SDF values on the ROI bounding cube; returns ``(values, origin, spacing)``."""
    axes, spacing = grid_points(scene.roi_center, scene.roi_radius, resolution)
    xs, ys, zs = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1)
    vals = np.empty(len(pts))
    for i in range(0, len(pts), chunk):
        vals[i:i + chunk] = scene.geometry.eval(pts[i:i + chunk])
    origin = np.array([a[0] for a in axes])
    return vals.reshape(resolution, resolution, resolution), origin, spacing


def marching_cubes_grid(values, origin, spacing, level: float = 0.0) -> TriangleMesh:
    """Triangulate ``{values == level}``; corners below the level are inside.

    Vertices lie on grid edges at the linear zero crossing and are shared
    between neighbouring cells, ordered by grid edge index.  Triangles are
    wound counter-clockwise seen from outside (normals point toward
    increasing values).
    """
    f = np.asarray(values, dtype=np.float64) - level
    nx, ny, nz = f.shape
    if min(f.shape) < 2:
        raise ValueError("grid needs at least two nodes per axis")
    inside = f < 0.0
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for bit, (dx, dy, dz) in enumerate(_CORNERS):
        case |= inside[dx:nx - 1 + dx, dy:ny - 1 + dy, dz:nz - 1 + dz].astype(np.int64) << bit
    cells = np.nonzero((case > 0) & (case < 255))
    if cells[0].size == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    cid = np.stack(cells, axis=1)                                # (M, 3)
    cc = case[cells]
    tri_edges = _TRI[cc][:, :15].reshape(-1, 5, 3)               # (M, 5, 3)
    valid = tri_edges[:, :, 0] >= 0
    cell_of_tri = np.repeat(np.arange(len(cc)), 5).reshape(-1, 5)[valid]
    local = tri_edges[valid]                                     # (T, 3) cube-edge ids

    # global edge id: node index * 3 + axis
    base = cid[cell_of_tri][:, None, :] + _EDGE_BASE[local]      # (T, 3, 3)
    axis = _EDGE_AXIS[local]
    node = (base[..., 0] * ny + base[..., 1]) * nz + base[..., 2]
    gid = node * 3 + axis
    uniq, inv = np.unique(gid.ravel(), return_inverse=True)
    faces = inv.reshape(-1, 3)

    n0 = uniq // 3
    ax = uniq % 3
    i0 = np.stack(np.unravel_index(n0, f.shape), axis=1)
    i1 = i0.copy()
    i1[np.arange(len(ax)), ax] += 1
    v0 = f[i0[:, 0], i0[:, 1], i0[:, 2]]
    v1 = f[i1[:, 0], i1[:, 1], i1[:, 2]]
    t = v0 / (v0 - v1)
    pos = i0 + t[:, None] * (i1 - i0)
    verts = np.asarray(origin, dtype=np.float64) + pos * spacing
    # the table winds triangles with normals toward the inside; flip
    return TriangleMesh(verts, faces[:, ::-1]).cleaned()


def marching_cubes(scene, resolution: int = 128, level: float = 0.0) -> TriangleMesh:
    """Zero level set of ``scene`` sampled on its ROI bounding cube.

    ``resolution`` is the number of grid nodes per axis.  An empty mesh is
    returned when the sampled field has no sign change.
    """
    if resolution < 16:
        raise ValueError("marching cubes resolution must be at least 16")
    vals, origin, spacing = sample_grid(scene, resolution)
    return marching_cubes_grid(vals, origin, spacing, level)


def cell_size(scene, resolution: int) -> float:
    return 2.0 * scene.roi_radius / (resolution - 1)
