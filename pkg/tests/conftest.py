import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_sphere_scene():
    from flashlit.brdf import TextelParams
    from flashlit.scene import ConstantTextel, SdfScene, Sphere

    theta = TextelParams((0.7, 0.45, 0.25), roughness=0.35, clearcoat_glossiness=0.5, metallic=0.4)
    return SdfScene(Sphere(radius=0.1), ConstantTextel(theta), roi_radius=0.15)


@pytest.fixture
def front_view():
    from flashlit.photometry import Flashlight
    from flashlit.renderer import CaptureView, Intrinsics, look_at

    K = Intrinsics.from_fov(16, 16, 45.0)
    return CaptureView(K, look_at((0.0, 0.0, 0.4)), Flashlight(0.5, 1))


# acceptance tests record one line per criterion here; printed at the end of the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
