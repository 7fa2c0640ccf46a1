"""Quadric-error-metric edge collapse."""

from __future__ import annotations

import heapq

import numpy as np

from .mesh import TriangleMesh

FLIP_COS = 0.2


def _cross(a, b):
    return np.stack([a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
                     a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
                     a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]], axis=-1)


def _face_quadrics(V, F):
    t = V[F]
    n = _cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    nn = np.linalg.norm(n, axis=1, keepdims=True)
    n = n / np.maximum(nn, 1e-300)
    d = -np.sum(n * t[:, 0], axis=1)
    p = np.concatenate([n, d[:, None]], axis=1)
    return p[:, :, None] * p[:, None, :]


def _optimal(Q, a, b):
    """Batched optimal collapse positions and costs.

    ``Q`` is ``(k, 4, 4)``; falls back to the best of the endpoints and the
    midpoint when the quadric's linear part is singular.
    """
    r0, r1, r2 = Q[:, 0, :3], Q[:, 1, :3], Q[:, 2, :3]
    rhs = -Q[:, :3, 3]
    c12, c20, c01 = _cross(r1, r2), _cross(r2, r0), _cross(r0, r1)
    det = np.sum(r0 * c12, axis=1)
    ok = np.abs(det) > 1e-12
    # symmetric system: inverse columns are the row cross products
    x = (c12 * rhs[:, :1] + c20 * rhs[:, 1:2] + c01 * rhs[:, 2:]) / np.where(ok, det, 1.0)[:, None]
    cands = [np.where(ok[:, None], x, a), a, b, 0.5 * (a + b)]
    costs = []
    for k, p in enumerate(cands):
        c = np.sum(p * np.einsum("kij,kj->ki", Q[:, :3, :3], p), axis=1) \
            + 2.0 * np.sum(p * Q[:, :3, 3], axis=1) + Q[:, 3, 3]
        if k == 0:
            c = np.where(ok, c, np.inf)
        costs.append(c)
    costs = np.stack(costs)
    best = np.argmin(costs, axis=0)
    pos = np.stack(cands)[best, np.arange(len(best))]
    return pos, np.maximum(costs[best, np.arange(len(best))], 0.0)


def simplify(mesh: TriangleMesh, target_faces: int, max_error: float | None = None) -> TriangleMesh:
    """Collapse edges in order of quadric error until ``target_faces`` remain.

    Collapses that would break the edge link condition (non-manifold result)
    or flip a neighbouring triangle are skipped.  Boundary vertices are kept
    fixed.  ``max_error`` optionally stops early once the cheapest collapse
    costs more than this squared distance.
    """
    if target_faces >= mesh.n_faces:
        return TriangleMesh(mesh.vertices.copy(), mesh.faces.copy())
    V = mesh.vertices.copy()
    F = mesh.faces.copy()
    nv = len(V)
    Qf = _face_quadrics(V, F)
    Q = np.zeros((nv, 4, 4))
    for k in range(3):
        np.add.at(Q, F[:, k], Qf)

    vert_faces = [set() for _ in range(nv)]
    for fi, (a, b, c) in enumerate(F.tolist()):
        vert_faces[a].add(fi)
        vert_faces[b].add(fi)
        vert_faces[c].add(fi)
    counts = {}
    for a, b, c in F.tolist():
        for e in ((a, b), (b, c), (c, a)):
            key = (min(e), max(e))
            counts[key] = counts.get(key, 0) + 1
    boundary = np.zeros(nv, dtype=bool)
    for (a, b), cnt in counts.items():
        if cnt != 2:
            boundary[a] = boundary[b] = True

    face_alive = np.ones(len(F), dtype=bool)
    alive = np.ones(nv, dtype=bool)
    stamp = np.zeros(nv, dtype=np.int64)
    heap = []

    def push(pairs):
        pairs = [(a, b) for a, b in pairs if not (boundary[a] or boundary[b])]
        if not pairs:
            return
        e = np.array(pairs)
        pos, cost = _optimal(Q[e[:, 0]] + Q[e[:, 1]], V[e[:, 0]], V[e[:, 1]])
        for (a, b), p, c in zip(pairs, pos, cost.tolist()):
            heapq.heappush(heap, (c, a, b, int(stamp[a]), int(stamp[b]), p))

    push(list(counts))

    def neighbours(u):
        out = set()
        for fi in vert_faces[u]:
            out.update(F[fi].tolist())
        out.discard(u)
        return out

    n_faces = len(F)
    while n_faces > target_faces and heap:
        cost, u, v, su, sv, p = heapq.heappop(heap)
        if not (alive[u] and alive[v]) or stamp[u] != su or stamp[v] != sv:
            continue
        if max_error is not None and cost > max_error:
            break
        shared = vert_faces[u] & vert_faces[v]
        if len(shared) != 2:
            continue
        opposite = set()
        for fi in shared:
            opposite.update(F[fi].tolist())
        opposite -= {u, v}
        if neighbours(u) & neighbours(v) != opposite:
            continue
        if _flips(V, F, (vert_faces[u] | vert_faces[v]) - shared, u, v, p):
            continue
        for fi in shared:
            face_alive[fi] = False
            for w in F[fi].tolist():
                vert_faces[w].discard(fi)
        n_faces -= len(shared)
        for fi in vert_faces[v]:
            row = F[fi]
            row[row == v] = u
            vert_faces[u].add(fi)
        vert_faces[v] = set()
        alive[v] = False
        V[u] = p
        Q[u] = Q[u] + Q[v]
        stamp[u] += 1
        push([(u, w) if u < w else (w, u) for w in neighbours(u)])

    faces = F[face_alive]
    used = np.unique(faces)
    remap = np.full(nv, -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return TriangleMesh(V[used], remap[faces])


def _flips(V, F, faces, u, v, p) -> bool:
    if not faces:
        return False
    tri = F[list(faces)]
    pts = V[tri]
    before = _cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])
    moved = (tri == u) | (tri == v)
    pts = np.where(moved[..., None], p, pts)
    after = _cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])
    nb = np.linalg.norm(before, axis=1)
    na = np.linalg.norm(after, axis=1)
    if np.any(na < 1e-15) or np.any(nb < 1e-15):
        return True
    return bool(np.any(np.sum(before * after, axis=1) < FLIP_COS * nb * na))
