"""End-to-end acceptance checks, one test per numbered criterion.

Each test records a single PASS/FAIL line that the terminal summary prints
at the end of the session.  The inverse-rendering experiments are the slow
part (a few minutes each on one core).
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from flashlit import brdf, photometry
from flashlit.brdf import TextelParams, brdf_gradient, clearcoat_roughness, eval_brdf
from flashlit.cli import main as cli_main
from flashlit.dataset import (
    REFERENCE_SEED,
    REFERENCE_SYNTH,
    SynthConfig,
    bundled_digest_path,
    bundled_scene_path,
    directory_digest,
    normalize_exposure,
    save_dataset,
    synthesize,
)
from flashlit.evaluation import MeshDistance, psnr, sample_surface, surface_distance
from flashlit.hdr import write_pfm
from flashlit.inverse import (
    FitConfig,
    FitProblem,
    Observation,
    calibrate_gamma,
    calibration_reading,
    fit,
    ratio_sweep,
)
from flashlit.meshing import cell_size, icosphere, marching_cubes
from flashlit.photometry import EnvironmentMap, Flashlight, flashlight_radiance
from flashlit.renderer import CaptureView, Intrinsics, RenderOptions, composite_weights, look_at, render_view
from flashlit.scene import ConstantTextel, SdfScene, Sphere, load_scene

from .conftest import ACCEPTANCE_LINES
from .oracles import brdf_colocated_dcos, eq_distance_oracle

ARTIFACTS = Path(__file__).parent / "artifacts"


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[n])
    assert ok, detail


def _rel_err(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


# --- 1 -------------------------------------------------------------------------------------


def test_c01_brdf_gradients_against_central_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    n, h = 1000, 1e-5
    # Stencils stay clear of the [0, 1] clamp on the parameters.  Above
    # cos_nh = 0.99 the glossiest clearcoat peak is narrower than the step,
    # so that band is checked against a 40-digit derivative instead.
    th = rng.uniform(0.01, 0.99, (n, brdf.N_PARAMS))
    c = rng.uniform(0.05, 0.99, n)
    dth, dc = brdf_gradient(c, th)
    worst = 0.0
    for k in range(brdf.N_PARAMS):
        tp, tm = th.copy(), th.copy()
        tp[:, k] += h
        tm[:, k] -= h
        fd = (eval_brdf(c, tp, validate=False) - eval_brdf(c, tm, validate=False)) / (2 * h)
        worst = max(worst, float(np.max(_rel_err(dth[..., k], fd))))
    fd = (eval_brdf(c + h, th) - eval_brdf(c - h, th)) / (2 * h)
    worst = max(worst, float(np.max(_rel_err(dc, fd))))
    elapsed = time.perf_counter() - t0

    near = rng.uniform(0.99, 1.0 - 1e-6, 20)
    near_th = rng.uniform(0.01, 0.99, (20, brdf.N_PARAMS))
    _, dnear = brdf_gradient(near, near_th)
    ref = np.array([brdf_colocated_dcos(a, t) for a, t in zip(near, near_th)])
    worst_near = float(np.max(_rel_err(dnear, ref)))
    record(1, worst < 1e-4 and elapsed < 10.0 and worst_near < 1e-4,
           f"max rel. error {worst:.2e} over {n} samples (< 1e-4), {elapsed:.2f} s (< 10 s); "
           f"near-normal cosine partial vs 40-digit derivative {worst_near:.1e}")


# --- 2 -------------------------------------------------------------------------------------


def test_c02_closed_form_spot_checks():
    metal = TextelParams((0.5, 0.5, 0.5), roughness=0.5, metallic=1.0)
    lobe = eval_brdf(1.0, metal)
    errs = {"metallic lobe": float(np.max(np.abs(lobe - 2.0 / np.pi))),
            "r_c(1)": abs(clearcoat_roughness(1.0) - 0.001),
            "r_c(0)": abs(clearcoat_roughness(0.0) - 0.1)}
    n = np.array([0.0, 0.0, 1.0])
    th = TextelParams((0.3, 0.6, 0.9), roughness=0.4, metallic=0.2, clearcoat=0.5)
    a = flashlight_radiance(n, n, 0.3, th)
    b = flashlight_radiance(n, n, 0.6, th)
    errs["inverse square"] = float(np.max(np.abs(b - a / 4)))
    back = flashlight_radiance(n, np.array([0.0, 0.6, -0.8]), 0.3, th)
    errs["backface clamp"] = float(np.max(np.abs(back)))
    worst = max(errs.values())
    record(2, worst < 1e-9, "; ".join(f"{k} {v:.1e}" for k, v in errs.items()) + " (all < 1e-9)")


# --- 3 -------------------------------------------------------------------------------------


def test_c03_compositing_weights():
    w, _ = composite_weights(np.array([0.5, 0.5, 1.0]))
    hand = float(np.max(np.abs(w - [0.5, 0.25, 0.25])))
    rng = np.random.default_rng(3)
    worst, total = -np.inf, 0
    for length in (1, 2, 3, 5, 8, 16, 32, 64, 128, 256):
        m = 100_000
        a = rng.uniform(size=(m, length))
        a[rng.uniform(size=a.shape) < 0.1] = 1.0  # fully opaque sections occur in practice
        s = composite_weights(a)[0].sum(axis=1)
        worst = max(worst, float(s.max()))
        total += m
    ok = hand == 0.0 and total == 10**6 and worst <= 1.0 + 1e-12
    record(3, ok, f"hand case error {hand:.1e}; max sum over {total} sequences {worst:.15f} (<= 1)")


# --- 4 -------------------------------------------------------------------------------------


def test_c04_flash_no_flash_linearity():
    rng = np.random.default_rng(4)
    worst = 0.0
    K = Intrinsics.from_fov(24, 24, 45.0)
    for trial in range(4):
        theta = TextelParams.from_array(rng.uniform(0, 1, 9))
        scene = SdfScene(Sphere(rng.uniform(-0.02, 0.02, 3), rng.uniform(0.07, 0.11)), ConstantTextel(theta),
                         roi_radius=0.15)
        env = EnvironmentMap(rng.uniform(0, 2, (8, 16, 3)), 64, seed=trial)
        eye = rng.normal(size=3)
        eye *= rng.uniform(0.3, 0.5) / np.linalg.norm(eye)
        gamma = float(rng.uniform(0.1, 3.0))
        opts = RenderOptions(n_samples=48, seed=trial, background="env")
        views = {s: CaptureView(K, look_at(eye), Flashlight(gamma, s)) for s in (0, 1)}
        on = render_view(scene, views[1], env, opts).rgb
        off = render_view(scene, views[0], env, opts).rgb
        flash_only = render_view(scene, CaptureView(K, look_at(eye), Flashlight(1.0, 1)), None,
                                 RenderOptions(n_samples=48, seed=trial)).rgb
        diff = (on - off) - gamma * flash_only
        worst = max(worst, float(np.max(np.abs(diff) / np.maximum(np.abs(on), 1e-300))))
    # the difference is one rounding of a floating-point add away from exact
    record(4, worst <= 4 * np.finfo(float).eps,
           f"max |(on - off) - gamma*flash| / |on| = {worst:.1e} over 4 scenes (float64 rounding)")


# --- 5 and 11: desk-scale inverse rendering ------------------------------------------------

C5_VIEWS = 32
C11_HELD_OUT = 4


@pytest.fixture(scope="module")
def darkroom_capture():
    truth = load_scene(bundled_scene_path())
    cfg = SynthConfig(n_views=C5_VIEWS + C11_HELD_OUT, flash_fraction=1.0, width=128, height=128,
                      environment=None, n_samples=128)
    ds = normalize_exposure(synthesize(truth, cfg, seed=11))
    cal = ds.manifest.calibration
    gamma = calibrate_gamma(cal["reading"], cal["albedo"], cal["distance"])
    views = ds.manifest.views()
    obs = [Observation(v, img) for v, img in zip(views[:C5_VIEWS], ds.images[:C5_VIEWS])]
    return truth, gamma, obs, list(zip(views[C5_VIEWS:], ds.images[C5_VIEWS:]))


@pytest.fixture(scope="module")
def reflectance_fit(darkroom_capture):
    truth, gamma, obs, _ = darkroom_capture
    start = truth.with_texel(ConstantTextel(np.full(9, 0.5)))
    t0 = time.perf_counter()
    res = fit(FitProblem(obs, start, ("theta",), gamma=gamma), FitConfig(iterations=6000, seed=0))
    return res, time.perf_counter() - t0


@pytest.mark.slow
def test_c05_inverse_rendering(darkroom_capture, reflectance_fit):
    truth, gamma, obs, _ = darkroom_capture
    res, elapsed = reflectance_fit
    t = truth.texel_field.params()
    f = res.scene.texel_field.params()
    e_base = float(np.max(np.abs(f[:3] - t[:3])))
    e_rough = abs(f[brdf.ROUGHNESS] - t[brdf.ROUGHNESS])
    e_metal = abs(f[brdf.METALLIC] - t[brdf.METALLIC])

    # free-radius variant: reflectance known, radius starts 10% small
    g = truth.geometry
    start = truth.with_geometry(Sphere(g.center, 0.9 * g.radius))
    t1 = time.perf_counter()
    rres = fit(FitProblem(obs, start, ("shape:radius",), gamma=gamma), FitConfig(iterations=1500, seed=1))
    elapsed += time.perf_counter() - t1
    e_radius = abs(rres.scene.geometry.radius - g.radius)

    ok = e_base < 1e-2 and e_rough < 2e-2 and e_metal < 3e-2 and e_radius < 1e-3 and elapsed < 900
    record(5, ok, f"gamma {gamma:.4f}; base_color {e_base:.1e} (<1e-2), roughness {e_rough:.1e} (<2e-2), "
                  f"metallic {e_metal:.1e} (<3e-2), radius {e_radius:.1e} (<1e-3); fits {elapsed:.0f} s (<900 s)")


@pytest.mark.slow
def test_c11_self_consistency_psnr(darkroom_capture, reflectance_fit):
    _, _, _, held = darkroom_capture
    res, _ = reflectance_fit
    opts = RenderOptions(n_samples=128, seed=99)
    scores = [psnr(render_view(res.scene, v, None, opts).rgb, img) for v, img in held]
    worst = min(scores)
    record(11, worst > 40.0, f"held-out PSNR min {worst:.2f} dB, mean {np.mean(scores):.2f} dB "
                             f"over {len(held)} views (> 40 dB)")


# --- 6 -------------------------------------------------------------------------------------


@pytest.mark.slow
def test_c06_flashlight_ratio_sweep():
    truth = load_scene(bundled_scene_path())
    rng = np.random.default_rng(6)
    K = Intrinsics.from_fov(64, 64, 45.0)
    views = []
    for _ in range(32):
        az, el = rng.uniform(0, 2 * np.pi), np.arccos(rng.uniform(0.05, 1.0))
        eye = rng.uniform(0.3, 0.5) * np.array([np.sin(el) * np.sin(az), np.cos(el), np.sin(el) * np.cos(az)])
        views.append(CaptureView(K, look_at(eye), Flashlight(1.0, 1)))
    # sky gradient with a small bright sun
    h, w = 16, 32
    y = (np.arange(h) + 0.5) / h
    sky = (0.3 + 0.7 * (1 - y))[:, None, None] * np.array([0.8, 0.9, 1.0]) * np.ones((h, w, 3))
    sky[2:5, 5:9] = 6.0
    env = EnvironmentMap(sky, n_samples=128)
    ratios = [0.0, 0.2, 0.5, 0.8, 1.0]
    reports = ratio_sweep(truth, views, env, ratios, config=FitConfig(iterations=6000), seed=6)

    ARTIFACTS.mkdir(exist_ok=True)
    (ARTIFACTS / "ratio_sweep.json").write_text(json.dumps([r.to_dict() for r in reports], indent=2) + "\n")

    by = {r.ratio: r for r in reports}
    zero_flagged = not by[0.0].constrained and all(v is None for v in by[0.0].errors.values())
    tol = {"base_color": 1e-2, "roughness": 2e-2, "metallic": 3e-2}
    within = {r: all(by[r].errors[k] < tol[k] for k in tol) for r in ratios if r >= 0.5}
    table = ", ".join(f"{r.ratio:g}: " + ("n/a" if not r.constrained else
                      "/".join(f"{r.errors[k]:.1e}" for k in tol)) for r in reports)
    record(6, zero_flagged and all(within.values()),
           f"errors base/rough/metal by ratio [{table}]; ratio 0 flagged unconstrained: {zero_flagged}")


# --- 7 -------------------------------------------------------------------------------------


def test_c07_meshing_fidelity():
    scene = SdfScene(Sphere(radius=1.0), roi_radius=1.2)
    mesh = marching_cubes(scene, 128)
    h = cell_size(scene, 128)
    radial = float(np.max(np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1.0)))
    area_err = abs(mesh.area() - 4 * np.pi) / (4 * np.pi)
    # symmetric distance against the exact sphere: mesh samples measure | |p| - 1 |,
    # uniform sphere samples measure their distance to the mesh
    rng = np.random.default_rng(7)
    n = 100_000
    to_sphere = np.abs(np.linalg.norm(sample_surface(mesh, n, rng), axis=1) - 1.0)
    u = rng.normal(size=(n, 3))
    to_mesh = MeshDistance(mesh).query(u / np.linalg.norm(u, axis=1, keepdims=True))
    dist = 0.5 * (to_sphere.mean() + to_mesh.mean())
    ok = radial < 1.5 * h and area_err < 0.02 and dist < 1.5 * h
    record(7, ok, f"cell {h:.4f}; radial error {radial / h:.3f} cells, area error {100 * area_err:.3f}%, "
                  f"mean distance {dist / h:.4f} cells (limits 1.5 cells, 2%, 1.5 cells)")


# --- 8 -------------------------------------------------------------------------------------


@pytest.mark.slow
def test_c08_distance_oracle_equivalence():
    mc = marching_cubes(SdfScene(Sphere(radius=1.0), roi_radius=1.2), 48)
    ico = icosphere(4)
    fast = surface_distance(mc, ico, details=True)
    ref_mean, _ = eq_distance_oracle(mc, ico, n_samples=100_000)
    rel = abs(fast.mean - ref_mean) / ref_mean
    back = surface_distance(ico, mc, details=True)
    asym = abs(fast.mean - back.mean)
    tol = 1e-5
    conc = surface_distance(icosphere(6, 1.0), icosphere(6, 1.1))
    conc_err = max(abs(conc[0] - 0.1), abs(conc[1] - 0.1))
    ok = rel < 0.05 and asym < 2 * tol and conc_err < 1e-4
    record(8, ok, f"fast {fast.mean:.4e} vs oracle {ref_mean:.4e} ({100 * rel:.2f}% < 5%); "
                  f"asymmetry {asym:.1e} (< 2e-5); concentric error {conc_err:.1e} (< 1e-4)")


# --- 9 -------------------------------------------------------------------------------------


def test_c09_loss_semantics():
    px = lambda v: np.full((1, 1, 3), v)  # noqa: E731
    both = photometry.rgb_loss(px(1.2), px(1.5))
    one = photometry.rgb_loss(px(0.5), px(1.5))
    neither = photometry.rgb_loss(px(0.5), px(0.25))
    sat_ok = both == 0.0 and one == pytest.approx(3.0) and neither == pytest.approx(0.75)
    bce = [photometry.mask_loss(np.array([p]), np.array([m])) for p, m in ((0.5, 1.0), (1.0, 1.0), (0.0, 0.0))]
    bce_ok = abs(bce[0] - math.log(2)) < 1e-9 and bce[1] < 1e-5 and bce[2] < 1e-5
    weights_ok = (photometry.total_loss(1.0, 2.0, mask_term=3.0) == pytest.approx(1.5)
                  and FitProblem.__dataclass_fields__["w_eikonal"].default == 0.1
                  and photometry.DEFAULT_W_MASK == 0.1)
    record(9, sat_ok and bce_ok and weights_ok,
           f"saturation cases {both:g}/{one:g}/{neither:g} (0/3/0.75); BCE(0.5,1) = {bce[0]:.6f}; "
           f"w_E = w_M = 0.1: {weights_ok}")


# --- 10 ------------------------------------------------------------------------------------


def _cli_twice(tmp_path, name, argv):
    digests = []
    for run in ("a", "b"):
        out = tmp_path / name / run
        code = cli_main(argv + ["--out", str(out)])
        assert code == 0, f"{name} exited with {code}"
        digests.append(directory_digest(out))
    return digests[0] == digests[1]


def test_c10_determinism(tmp_path, capsys):
    cfg = tmp_path / "synth.json"
    cfg.write_text(json.dumps({"n_views": 4, "width": 16, "height": 16, "n_samples": 32, "env_samples": 16}))
    same = {"synth": _cli_twice(tmp_path, "synth", ["synth", "--config", str(cfg), "--seed", "3"])}
    data = tmp_path / "synth" / "a"
    scene = str(data / "scene.json")
    fit_cfg = tmp_path / "fit.json"
    fit_cfg.write_text(json.dumps({"fit": {"iterations": 10, "batch_size": 64}}))
    mesh_cfg = tmp_path / "mesh.json"
    mesh_cfg.write_text(json.dumps({"resolution": 32, "target_faces": 300, "texture_resolution": 64}))
    eval_cfg = tmp_path / "eval.json"
    eval_cfg.write_text(json.dumps({"resolution": 32}))
    rng = np.random.default_rng(10)
    amb = rng.uniform(0, 0.5, (8, 8, 3))
    write_pfm(tmp_path / "on.pfm", amb + rng.uniform(0, 0.4, amb.shape))
    write_pfm(tmp_path / "off.pfm", amb)

    same["fit"] = _cli_twice(tmp_path, "fit", ["fit", str(data / "manifest.json"), "--config", str(fit_cfg)])
    same["mesh"] = _cli_twice(tmp_path, "mesh", ["mesh", scene, "--config", str(mesh_cfg)])
    same["eval"] = _cli_twice(tmp_path, "eval", ["eval", scene, scene, "--manifest", str(data / "manifest.json"),
                                                 "--config", str(eval_cfg)])
    same["figures"] = _cli_twice(tmp_path, "figures", ["figures", str(data / "manifest.json"), "--scene", scene])
    same["flash-isolate"] = _cli_twice(tmp_path, "iso", ["flash-isolate", str(tmp_path / "on.pfm"),
                                                         str(tmp_path / "off.pfm")])
    capsys.readouterr()

    truth = load_scene(bundled_scene_path())
    ds = synthesize(truth, SynthConfig.from_dict(REFERENCE_SYNTH), seed=REFERENCE_SEED, scene_ref="scene.json")
    save_dataset(ds, tmp_path / "reference", truth)
    digest_ok = directory_digest(tmp_path / "reference") == bundled_digest_path().read_text().strip()
    record(10, all(same.values()) and digest_ok,
           "bit-identical reruns: " + ", ".join(f"{k} {v}" for k, v in same.items())
           + f"; bundled digest reproduced: {digest_ok}")
