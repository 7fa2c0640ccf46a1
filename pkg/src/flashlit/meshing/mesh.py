"""Indexed triangle meshes and Wavefront OBJ I/O."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEGENERATE_AREA = 1e-12


@dataclass
class TriangleMesh:
    """Vertices (meters), triangles and optional UVs.

    UVs are stored with their own index buffer (``face_uvs``) because the
    per-triangle atlas gives every triangle its own chart.
    """

    vertices: np.ndarray
    faces: np.ndarray
    uvs: np.ndarray | None = None
    face_uvs: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")
        if self.uvs is not None:
            self.uvs = np.asarray(self.uvs, dtype=np.float64).reshape(-1, 2)
            self.face_uvs = np.asarray(self.face_uvs, dtype=np.int64).reshape(-1, 3)
            if self.face_uvs.shape != self.faces.shape:
                raise ValueError("face_uvs must parallel faces")
            if self.face_uvs.size and (self.face_uvs.min() < 0 or self.face_uvs.max() >= len(self.uvs)):
                raise ValueError("uv index out of range")

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def is_empty(self) -> bool:
        return self.n_faces == 0

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        t = self.triangles()
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def face_normals(self) -> np.ndarray:
        t = self.triangles()
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)

    def vertex_normals(self) -> np.ndarray:
        t = self.triangles()
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])    # area weighted
        acc = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(acc, self.faces[:, k], n)
        return acc / np.maximum(np.linalg.norm(acc, axis=1, keepdims=True), 1e-300)

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def edges(self) -> np.ndarray:
        """Unique undirected edges ``(E, 2)`` with ``e[:, 0] < e[:, 1]``."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def edge_face_counts(self) -> np.ndarray:
        e = np.sort(np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_manifold(self) -> bool:
        """Every edge is shared by at most two faces."""
        return bool(self.is_empty or self.edge_face_counts().max() <= 2)

    def is_watertight(self) -> bool:
        return bool(not self.is_empty and np.all(self.edge_face_counts() == 2))

    def cleaned(self) -> "TriangleMesh":
        """Drop near-zero-area triangles and unreferenced vertices."""
        keep = self.face_areas() > DEGENERATE_AREA
        faces = self.faces[keep]
        used = np.unique(faces)
        remap = np.full(len(self.vertices), -1, dtype=np.int64)
        remap[used] = np.arange(used.size)
        out = TriangleMesh(self.vertices[used], remap[faces])
        if self.uvs is not None:
            out.uvs = self.uvs
            out.face_uvs = self.face_uvs[keep]
        return out

    def content_hash(self) -> int:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.faces).tobytes())
        return int.from_bytes(h.digest()[:8], "little")


def write_obj(path, mesh: TriangleMesh, normals=None, mtl_name: str | None = None,
              material: str = "material0") -> None:
    path = Path(path)
    lines = []
    if mtl_name:
        lines.append(f"mtllib {mtl_name}")
    lines += [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    has_uv = mesh.uvs is not None
    if has_uv:
        lines += [f"vt {u:.9g} {v:.9g}" for u, v in mesh.uvs]
    if normals is not None:
        lines += [f"vn {x:.6f} {y:.6f} {z:.6f}" for x, y, z in np.asarray(normals)]
    if mtl_name:
        lines.append(f"usemtl {material}")
    f = mesh.faces + 1
    if has_uv and normals is not None:
        t = mesh.face_uvs + 1
        lines += [f"f {a}/{ta}/{a} {b}/{tb}/{b} {c}/{tc}/{c}" for (a, b, c), (ta, tb, tc) in zip(f, t)]
    elif has_uv:
        t = mesh.face_uvs + 1
        lines += [f"f {a}/{ta} {b}/{tb} {c}/{tc}" for (a, b, c), (ta, tb, tc) in zip(f, t)]
    elif normals is not None:
        lines += [f"f {a}//{a} {b}//{b} {c}//{c}" for a, b, c in f]
    else:
        lines += [f"f {a} {b} {c}" for a, b, c in f]
    path.write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriangleMesh:
    """Triangle OBJ reader (v, vt, f); polygons are fan-triangulated."""
    verts, uvs, faces, fuv = [], [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vt":
            uvs.append([float(x) for x in parts[1:3]])
        elif parts[0] == "f":
            idx = [p.split("/") for p in parts[1:]]
            vi = [int(p[0]) - 1 for p in idx]
            ti = [int(p[1]) - 1 if len(p) > 1 and p[1] else -1 for p in idx]
            for k in range(1, len(vi) - 1):
                faces.append([vi[0], vi[k], vi[k + 1]])
                fuv.append([ti[0], ti[k], ti[k + 1]])
    mesh = TriangleMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
    if uvs and fuv and min(min(r) for r in fuv) >= 0:
        mesh = TriangleMesh(mesh.vertices, mesh.faces, np.array(uvs), np.array(fuv))
    return mesh


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Geodesic sphere, handy as a reference surface."""
    t = (1.0 + 5.0**0.5) / 2.0
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
                  [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
                  [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
                  [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(e, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        mid = v[uniq[:, 0]] + v[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = len(v) + inv.reshape(3, -1).T        # (F, 3) midpoints of edges 01, 12, 20
        v = np.concatenate([v, mid])
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
        f = np.concatenate([np.stack([a, m01, m20], 1), np.stack([b, m12, m01], 1),
                            np.stack([c, m20, m12], 1), np.stack([m01, m12, m20], 1)])
    return TriangleMesh(np.asarray(center) + radius * v, f)
