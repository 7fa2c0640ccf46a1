import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from flashlit.evaluation import (
    MeshDistance,
    MetricReport,
    closest_point_on_triangles,
    depth_error,
    mesh_object_length,
    normal_error,
    psnr,
    psnr_ssim,
    sample_surface,
    ssim,
    surface_distance,
    visible_faces,
)
from flashlit.hdr import HdrImage
from flashlit.meshing import TriangleMesh, icosphere, marching_cubes
from flashlit.renderer import CaptureView, Intrinsics, look_at
from flashlit.scene import SdfScene, Sphere

from .oracles import (brute_point_mesh_distance, eq_distance_oracle, point_triangle_distance,
                      pruned_point_mesh_distance, ssim_reference)

# --- point-to-mesh distance -------------------------------------------------------------


@given(st.integers(0, 2**32 - 1))
def test_closest_point_matches_the_scalar_oracle(seed):
    r = np.random.default_rng(seed)
    a, b, c = r.normal(size=(3, 3))
    p = r.normal(size=3) * 2
    q = closest_point_on_triangles(p[None], a[None], b[None], c[None])[0]
    assert np.linalg.norm(p - q) == pytest.approx(point_triangle_distance(p, a, b, c), rel=1e-9, abs=1e-12)


def test_mesh_distance_agrees_with_exhaustive_search(rng):
    m = marching_cubes(SdfScene(Sphere(radius=0.1), roi_radius=0.15), 24)
    pts = rng.normal(size=(500, 3)) * 0.12
    d, face = MeshDistance(m).query(pts, return_face=True)
    np.testing.assert_allclose(d, brute_point_mesh_distance(pts, m.vertices, m.faces), rtol=1e-9, atol=1e-13)
    tri = m.triangles()[face]
    q = closest_point_on_triangles(pts, tri[:, 0], tri[:, 1], tri[:, 2])
    np.testing.assert_allclose(np.linalg.norm(pts - q, axis=1), d, rtol=1e-12)


def test_surface_samples_are_on_the_mesh(rng):
    m = icosphere(2)
    pts = sample_surface(m, 300, rng)
    assert np.max(brute_point_mesh_distance(pts, m.vertices, m.faces)) < 1e-12


def test_sampling_is_area_uniform(rng):
    # two triangles with areas 0.5 and 3.0
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0], [5, 0, 0], [2, 2, 0]], dtype=float)
    m = TriangleMesh(v, np.array([[0, 1, 2], [3, 4, 5]]))
    pts = sample_surface(m, 40000, rng)
    assert np.mean(pts[:, 0] >= 2) == pytest.approx(6 / 7, abs=0.01)
    small = pts[pts[:, 0] < 2]
    # uniform inside a triangle: mean is the centroid
    np.testing.assert_allclose(small.mean(axis=0), [1 / 3, 1 / 3, 0], atol=0.02)


# --- symmetric surface distance----------------------------------------------------------------


def test_identical_meshes_are_at_zero_distance():
    m = icosphere(3)
    mean, median = surface_distance(m, m)
    assert mean < 1e-5 and median < 1e-5


def test_concentric_spheres():
    inner = icosphere(6, 1.0)
    outer = icosphere(6, 1.1)
    mean, median = surface_distance(inner, outer)
    assert mean == pytest.approx(0.1, abs=1e-4)
    assert median == pytest.approx(0.1, abs=1e-4)


def test_distance_is_symmetric():
    a = marching_cubes(SdfScene(Sphere(radius=0.1), roi_radius=0.15), 20)
    b = icosphere(3, 0.1)
    d1 = surface_distance(a, b, details=True)
    d2 = surface_distance(b, a, details=True)
    assert abs(d1.mean - d2.mean) < 2e-5
    assert d1.mean == d2.mean and d1.median == d2.median


def test_distance_matches_the_fixed_sample_oracle():
    mc = marching_cubes(SdfScene(Sphere(radius=1.0), roi_radius=1.2), 24)
    ico = icosphere(3)
    mean, _ = surface_distance(mc, ico)
    ref_mean, _ = eq_distance_oracle(mc, ico, n_samples=20000)
    assert mean == pytest.approx(ref_mean, rel=0.05)


def test_stopping_rule_and_pair_cap():
    a, b = icosphere(2), icosphere(2, 1.3)
    d = surface_distance(a, b, details=True, tol=0.0, max_pairs=10000, batch=3000)
    assert d.n_pairs == 10000
    quick = surface_distance(a, icosphere(2, 1.05), details=True)
    assert quick.std_of_mean <= 1e-5 and quick.n_pairs % 4096 == 0


def test_distance_is_seeded():
    a, b = icosphere(2), icosphere(3, 1.02)
    assert surface_distance(a, b, seed=1) == surface_distance(a, b, seed=1)
    assert surface_distance(a, b, seed=1) != surface_distance(a, b, seed=2)


def test_empty_mesh_is_rejected():
    empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    with pytest.raises(ValueError):
        surface_distance(empty, icosphere(1))


def test_visibility_restricts_to_seen_faces():
    m = icosphere(3, 0.1)
    view = CaptureView(Intrinsics.from_fov(48, 48, 40.0), look_at((0.0, 0.0, 0.5)))
    seen = visible_faces(m, [view])
    centroids = m.triangles().mean(axis=1)
    assert 0 < seen.size < m.n_faces
    assert np.all(centroids[seen, 2] > -0.02)
    # a mesh that differs only on the hidden side measures as equal from the front
    v = m.vertices.copy()
    v[v[:, 2] < -0.05] *= 1.2
    bent = TriangleMesh(v, m.faces)
    assert surface_distance(m, bent, visibility=[view])[0] < 1e-6
    assert surface_distance(m, bent)[0] > 1e-3


# --- rasters -------------------------------------------------------------------------------


def test_normal_error_examples(rng):
    n = rng.normal(size=(6, 7, 3))
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    assert normal_error(n, n)[0] == pytest.approx(0.0, abs=1e-5)
    assert normal_error(n, -n) == pytest.approx((180.0, 180.0), abs=1e-5)
    z = np.tile([0.0, 0.0, 1.0], (4, 4, 1))
    x = np.tile([1.0, 0.0, 0.0], (4, 4, 1))
    assert normal_error(z, x) == pytest.approx((90.0, 90.0))


@given(st.integers(0, 2**32 - 1))
def test_normal_error_is_rotation_invariant(seed):
    r = np.random.default_rng(seed)
    a = r.normal(size=(5, 5, 3))
    b = r.normal(size=(5, 5, 3))
    R = Rotation.random(random_state=seed).as_matrix()
    np.testing.assert_allclose(normal_error(a @ R.T, b @ R.T), normal_error(a, b), atol=1e-6)


def test_normal_error_valid_mask():
    a = np.tile([0.0, 0.0, 1.0], (2, 2, 1))
    b = a.copy()
    b[0, 0] = [1.0, 0.0, 0.0]
    mask = np.array([[False, True], [True, True]])
    assert normal_error(a, b, mask) == (0.0, 0.0)
    with pytest.raises(ValueError):
        normal_error(a, b, np.zeros((2, 2), bool))


def test_depth_error_examples():
    L = 2.0
    gt = np.linspace(0.3, 0.5, 20).reshape(4, 5)
    assert depth_error(gt, gt, None, L) == (0.0, 0.0)
    assert depth_error(gt + 0.001 * L, gt, None, L) == pytest.approx((1.0, 1.0))
    flat = np.zeros(21)
    off = flat.copy()
    off[:10] = 0.002 * L
    mean, median = depth_error(off, flat, None, L)
    assert median == 0.0 and mean == pytest.approx(2.0 * 10 / 21)


def test_object_length_is_bbox_diagonal():
    m = icosphere(2, 0.5)
    assert mesh_object_length(m) == pytest.approx(np.sqrt(3.0), rel=1e-3)


# --- images --------------------------------------------------------------------------------


def test_psnr_examples(rng):
    img = rng.uniform(size=(16, 16, 3))
    assert psnr(img, img) == 100.0
    a = np.full((8, 8, 3), 0.5)
    assert psnr(a + 0.1, a) == pytest.approx(20.0)
    assert psnr(HdrImage(a + 0.1), HdrImage(a)) == pytest.approx(20.0)


def test_ssim_examples(rng):
    img = rng.uniform(size=(48, 48, 3))
    assert ssim(img, img) == pytest.approx(1.0)
    shifted = np.roll(img, 24, axis=1)
    assert abs(ssim(img, shifted)) < 0.05


def test_ssim_matches_the_reference_formula(rng):
    a = rng.uniform(size=(40, 36, 3))
    b = np.clip(a + 0.1 * rng.normal(size=a.shape), 0, 1)
    ref = ssim_reference(a, b)
    got = ssim(a, b)
    assert got == pytest.approx(ref, abs=5e-3)


@given(st.integers(0, 2**32 - 1))
def test_psnr_ssim_symmetric_and_bounded(seed):
    r = np.random.default_rng(seed)
    a = r.uniform(size=(16, 16, 3))
    b = np.clip(a + r.normal(scale=0.2, size=a.shape), 0, 1)
    p1, s1 = psnr_ssim(a, b)
    p2, s2 = psnr_ssim(b, a)
    assert p1 == pytest.approx(p2) and s1 == pytest.approx(s2)
    assert -1.0 <= s1 <= 1.0 and p1 >= 0


def test_hdr_values_are_clipped_before_scoring():
    a = np.full((8, 8, 3), 1.0)
    assert psnr(a * 5.0, a) == 100.0


# --- report ---------------------------------------------------------------------------------


def test_metric_report_round_trip_and_table():
    r = MetricReport()
    r.set_distance(0.002, 0.001, 0.5)
    r.normal_mean, r.normal_median = 3.25, 2.5
    r.psnr, r.ssim = 41.2, 0.991
    assert r.distance_mean == pytest.approx(4.0) and r.distance_median == pytest.approx(2.0)
    again = MetricReport.from_dict(json.loads(r.to_json()))
    assert again == r
    table = r.to_table()
    assert "Distance" in table and "41.20" in table and "-" in table


def test_pruned_oracle_equals_exhaustive_search(rng):
    m = icosphere(2, 0.3)
    pts = rng.normal(size=(300, 3)) * 0.4
    np.testing.assert_allclose(pruned_point_mesh_distance(pts, m.vertices, m.faces),
                               brute_point_mesh_distance(pts, m.vertices, m.faces), rtol=1e-12, atol=1e-15)
