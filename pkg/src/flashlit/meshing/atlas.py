"""Per-triangle texture atlas.

Every triangle gets its own square block of ``B x B`` texels and is laid out
as the right triangle with corners at texel centres ``(0.5, 0.5)``,
``(B - 0.5, 0.5)`` and ``(0.5, B - 0.5)`` of its block, which leaves a
half-texel gutter along the block border.  Texels whose centres fall inside
the triangle are valid and map barycentrically to the surface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import TriangleMesh

MIN_BLOCK = 3
INSIDE_TOL = 1e-9


@dataclass
class Atlas:
    resolution: int
    block: int
    points: np.ndarray       # (R, R, 3) surface point per texel (row = v, col = u)
    valid: np.ndarray        # (R, R) bool
    face_id: np.ndarray      # (R, R) int, -1 outside every chart
    bary: np.ndarray         # (R, R, 3)

    @property
    def blocks_per_row(self) -> int:
        return self.resolution // self.block


def _local_layout(B):
    """Chart corners (texel units) and barycentric weights of a block's texel centres."""
    c = np.array([[0.5, 0.5], [B - 0.5, 0.5], [0.5, B - 0.5]])
    iy, ix = np.mgrid[0:B, 0:B]
    px = ix + 0.5
    py = iy + 0.5
    span = B - 1.0
    l1 = (px - 0.5) / span
    l2 = (py - 0.5) / span
    l0 = 1.0 - l1 - l2
    bary = np.stack([l0, l1, l2], axis=-1)
    inside = np.all(bary >= -INSIDE_TOL, axis=-1)
    return c, bary, inside


def block_size(n_faces: int, resolution: int) -> int:
    per_row = int(np.ceil(np.sqrt(n_faces)))
    return resolution // max(per_row, 1)


def build_atlas(mesh: TriangleMesh, texture_resolution: int = 2048):
    """Assign per-triangle UV charts and rasterise the 3D atlas.

    Returns ``(mesh_with_uvs, atlas)``.  UV ``(0, 0)`` is the bottom-left of
    the texture (OBJ convention); atlas rows run top to bottom.
    """
    if mesh.is_empty:
        raise ValueError("cannot build an atlas for an empty mesh")
    R = int(texture_resolution)
    B = block_size(mesh.n_faces, R)
    if B < MIN_BLOCK:
        raise ValueError(f"texture resolution {R} is too small for {mesh.n_faces} triangles")
    per_row = R // B
    nf = mesh.n_faces
    fid = np.arange(nf)
    bx = (fid % per_row) * B
    by = (fid // per_row) * B

    corners, bary_local, inside_local = _local_layout(B)
    # texel-space corner positions -> UVs with v flipped (row 0 is the top)
    tx = bx[:, None] + corners[None, :, 0]
    ty = by[:, None] + corners[None, :, 1]
    uvs = np.stack([tx / R, 1.0 - ty / R], axis=-1).reshape(-1, 2)
    face_uvs = np.arange(3 * nf).reshape(nf, 3)
    out_mesh = TriangleMesh(mesh.vertices, mesh.faces, uvs, face_uvs)

    rows = np.arange(R)
    ly, lx = rows % B, rows % B
    block = (rows // B)[:, None] * per_row + (rows // B)[None, :]
    in_grid = ((rows // B) < per_row)[:, None] & ((rows // B) < per_row)[None, :]
    face_map = np.where(in_grid & (block < nf), block, -1)
    valid = (face_map >= 0) & inside_local[ly[:, None], lx[None, :]]
    face_map = np.where(valid, face_map, -1)
    bary = np.where(valid[..., None], bary_local[ly[:, None], lx[None, :]], 0.0)

    points = np.zeros((R, R, 3))
    yy, xx = np.nonzero(valid)
    tri = mesh.triangles()[face_map[yy, xx]]                     # (N, 3, 3)
    points[yy, xx] = np.einsum("nc,ncd->nd", bary[yy, xx], tri)
    return out_mesh, Atlas(R, B, points, valid, face_map, bary)


def uv_to_point(mesh: TriangleMesh, face: int, uv) -> np.ndarray:
    """Surface point for a UV inside ``face``'s chart (barycentric interpolation)."""
    uv = np.asarray(uv, dtype=np.float64)
    a, b, c = mesh.uvs[mesh.face_uvs[face]]
    T = np.column_stack([b - a, c - a])
    l1, l2 = np.linalg.solve(T, uv - a)
    v = mesh.vertices[mesh.faces[face]]
    return (1.0 - l1 - l2) * v[0] + l1 * v[1] + l2 * v[2]


def uv_to_texel(uv, resolution: int) -> np.ndarray:
    """Continuous texel coordinates ``(x, y)`` (row index grows downward)."""
    uv = np.asarray(uv, dtype=np.float64)
    return np.stack([uv[..., 0] * resolution, (1.0 - uv[..., 1]) * resolution], axis=-1)
