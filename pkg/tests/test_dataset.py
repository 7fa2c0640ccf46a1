import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flashlit.dataset import (
    REFERENCE_SEED,
    REFERENCE_SYNTH,
    DatasetManifest,
    ManifestEntry,
    SynthConfig,
    azimuths,
    bundled_digest_path,
    bundled_scene_path,
    directory_digest,
    dome_positions,
    load_dataset,
    normalize_exposure,
    read_manifest,
    save_dataset,
    spiral_positions,
    synthesize,
    write_manifest,
)
from flashlit.renderer import Intrinsics, look_at
from flashlit.scene import load_scene


def _manifest(n=3):
    K = Intrinsics.from_fov(8, 6, 50.0)
    entries = [ManifestEntry(f"images/{i:04d}.pfm", K, look_at((0.1 * i, 0.2, 0.4)), i % 2, 2.0 ** -i)
               for i in range(n)]
    return DatasetManifest(entries, roi_radius=0.2, gamma=0.75, meta={"note": "x"})


@pytest.fixture(scope="module")
def tiny_dataset():
    cfg = SynthConfig(n_views=4, width=12, height=10, n_samples=24, env_samples=16, environment="sky")
    return synthesize(load_scene(bundled_scene_path()), cfg, seed=5, scene_ref="scene.json")


def test_manifest_text_round_trip():
    m = _manifest()
    text = m.dumps()
    again = DatasetManifest.from_dict(json.loads(text))
    assert again.dumps() == text
    assert again.n_flash == 1


def test_manifest_validation():
    m = _manifest()
    m.entries[0].exposure_ratio = 0.0
    with pytest.raises(ValueError):
        m.validate()
    with pytest.raises(ValueError):
        DatasetManifest([]).validate()
    d = _manifest().to_dict()
    d["version"] = 99
    with pytest.raises(ValueError):
        DatasetManifest.from_dict(d)


def test_read_manifest_reports_missing_images(tmp_path):
    path = tmp_path / "manifest.json"
    write_manifest(path, _manifest())
    with pytest.raises(ValueError, match="missing file"):
        read_manifest(path)
    with pytest.raises(ValueError):
        read_manifest(tmp_path / "absent.json")


def test_saved_dataset_loads_back(tmp_path, tiny_dataset):
    save_dataset(tiny_dataset, tmp_path)
    ds, root = load_dataset(tmp_path)
    assert root == tmp_path
    assert ds.manifest.dumps() == tiny_dataset.manifest.dumps()
    for a, b in zip(ds.images, tiny_dataset.images):
        np.testing.assert_allclose(a, b, rtol=1e-6)
    np.testing.assert_array_equal(ds.env_data, tiny_dataset.env_data)


def test_exposure_normalisation_is_idempotent(tiny_dataset):
    once = normalize_exposure(tiny_dataset)
    twice = normalize_exposure(once)
    assert all(e.exposure_ratio == 1.0 for e in once.manifest.entries)
    for a, b, e, raw in zip(once.images, twice.images, tiny_dataset.manifest.entries, tiny_dataset.images):
        np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(a * e.exposure_ratio, raw, rtol=1e-12)


def test_unit_ratios_leave_images_untouched(tiny_dataset):
    ds = normalize_exposure(tiny_dataset)
    again = normalize_exposure(ds)
    assert all(a is b for a, b in zip(ds.images, again.images))


def test_default_protocol():
    cfg = SynthConfig()
    assert cfg.n_views == 150 and cfg.flash_fraction == 0.5
    assert tuple(cfg.distance) == (0.3, 0.5)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        SynthConfig.from_dict({"n_view": 3})
    with pytest.raises(ValueError):
        SynthConfig.from_dict({"trajectory": "zigzag"})


@given(st.integers(0, 2**32 - 1))
def test_dome_positions_respect_the_protocol(seed):
    p = dome_positions(200, np.random.default_rng(seed))
    r = np.linalg.norm(p, axis=1)
    assert np.all((r >= 0.3) & (r <= 0.5))
    assert np.all(p[:, 1] > 0)


def test_spiral_azimuth_is_monotone(rng):
    p, phi = spiral_positions(90, rng)
    az = azimuths(p)
    assert np.all(np.diff(az) > 0)
    np.testing.assert_allclose(az - az[0], phi - phi[0], atol=1e-9)


def test_half_the_views_use_the_flash(tiny_dataset):
    m = tiny_dataset.manifest
    assert m.n_flash == 2 and len(m.entries) == 4
    for e in m.entries:
        assert np.log2(e.exposure_ratio) == round(np.log2(e.exposure_ratio))


def test_synthesis_is_seeded(tmp_path):
    scene = load_scene(bundled_scene_path())
    cfg = SynthConfig(n_views=3, width=8, height=8, n_samples=16, env_samples=8)
    for name, seed in (("a", 1), ("b", 1), ("c", 2)):
        save_dataset(synthesize(scene, cfg, seed=seed), tmp_path / name)
    assert directory_digest(tmp_path / "a") == directory_digest(tmp_path / "b")
    assert directory_digest(tmp_path / "a") != directory_digest(tmp_path / "c")


def test_threads_do_not_change_the_images():
    scene = load_scene(bundled_scene_path())
    cfg = SynthConfig(n_views=2, width=10, height=10, n_samples=16, env_samples=8)
    a = synthesize(scene, cfg, seed=4, threads=1)
    b = synthesize(scene, cfg, seed=4, threads=3)
    for x, y in zip(a.images, b.images):
        np.testing.assert_array_equal(x, y)


def test_bundled_digest_is_reproduced(tmp_path):
    scene = load_scene(bundled_scene_path())
    ds = synthesize(scene, SynthConfig.from_dict(REFERENCE_SYNTH), seed=REFERENCE_SEED, scene_ref="scene.json")
    save_dataset(ds, tmp_path, scene)
    assert directory_digest(tmp_path) == bundled_digest_path().read_text().strip()
