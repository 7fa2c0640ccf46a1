import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flashlit import brdf
from flashlit.brdf import (ShadingGeom, TextelParams, brdf_gradient, clearcoat_roughness, eval_brdf,
                           eval_brdf_bidirectional, eval_clearcoat, eval_diffuse_lobes, eval_ggx_specular)

from .oracles import brdf_colocated

unit = st.floats(0.0, 1.0)
inner = st.floats(0.02, 0.98)
theta_st = st.lists(unit, min_size=9, max_size=9).map(np.array)
cos_st = st.floats(brdf.EPS_COS, 1.0)


def theta(**kw):
    return TextelParams(**{"base_color": (0.5, 0.5, 0.5), "roughness": 0.5, "clearcoat_glossiness": 0.5,
                           "subsurface": 0.0, "metallic": 0.0, "dielectric": 0.0, "clearcoat": 0.0, **kw})


class TestTextelParams:
    def test_nine_components(self):
        assert theta().as_array().shape == (9,)

    @pytest.mark.parametrize("field", ["roughness", "metallic", "clearcoat"])
    @pytest.mark.parametrize("value", [-0.01, 1.01, np.nan])
    def test_out_of_range_rejected(self, field, value):
        with pytest.raises(ValueError):
            theta(**{field: value})

    def test_dict_round_trip(self):
        t = theta(base_color=(0.1, 0.2, 0.3), metallic=0.7)
        assert TextelParams.from_dict(t.to_dict()) == t
        assert TextelParams.from_array(t.as_array()) == t

    def test_clearcoat_roughness_endpoints(self):
        assert clearcoat_roughness(1.0) == pytest.approx(0.001, abs=1e-15)
        assert clearcoat_roughness(0.0) == 0.1

    @given(unit)
    def test_clearcoat_roughness_range(self, g):
        assert 0.001 - 1e-15 <= clearcoat_roughness(g) <= 0.1


class TestGeometry:
    def test_unnormalized_rejected(self):
        with pytest.raises(ValueError):
            ShadingGeom(np.array([0, 0, 2.0]), np.array([0, 0, 1.0]))

    def test_cos_clamped(self):
        g = ShadingGeom(np.array([0, 0, 1.0]), np.array([1.0, 0, 0]))
        assert g.cos_nh == brdf.EPS_COS


class TestClosedForms:
    def test_lambert_at_normal_incidence(self):
        c = np.array([0.2, 0.5, 0.9])
        out = eval_brdf(1.0, theta(base_color=tuple(c)))
        np.testing.assert_allclose(out, c / np.pi, rtol=0, atol=1e-15)

    def test_metallic_lobe_two_over_pi(self):
        out = eval_brdf(1.0, theta(metallic=1.0, roughness=0.5))
        np.testing.assert_allclose(out, 2.0 / np.pi, rtol=0, atol=1e-12)

    def test_subsurface_full_at_normal_incidence(self):
        c = np.array([0.3, 0.6, 0.9])
        out = eval_brdf(1.0, theta(base_color=tuple(c), subsurface=1.0, roughness=1.0))
        np.testing.assert_allclose(out, 1.25 * c / (2 * np.pi), atol=1e-15)

    def test_diffuse_roughness_quarter(self):
        c = np.array([0.4, 0.5, 0.6])
        np.testing.assert_allclose(eval_diffuse_lobes(1.0, theta(base_color=tuple(c), roughness=0.25)),
                                   c / np.pi, atol=1e-15)

    def test_subsurface_half_cos(self):
        c = np.array([0.4, 0.5, 0.6])
        out = eval_diffuse_lobes(0.5, theta(base_color=tuple(c), subsurface=1.0, roughness=1.0))
        np.testing.assert_allclose(out, 1.25 * c / np.pi, rtol=1e-14)

    @given(cos_st)
    def test_subsurface_half_is_midpoint(self, c):
        t0 = theta(subsurface=0.0)
        t1 = theta(subsurface=1.0)
        th = theta(subsurface=0.5)
        mid = 0.5 * (eval_diffuse_lobes(c, t0) + eval_diffuse_lobes(c, t1))
        np.testing.assert_allclose(eval_diffuse_lobes(c, th), mid, rtol=1e-12)

    def test_ggx_roughness_one(self):
        F = np.array([0.2, 0.5, 1.0])
        out = eval_ggx_specular(1.0, theta(roughness=1.0), F)
        np.testing.assert_allclose(out, F / (4 * np.pi), rtol=1e-14)

    def test_ggx_finite_at_zero_roughness(self):
        out = eval_ggx_specular(1.0, theta(roughness=0.0), 1.0)
        assert np.all(np.isfinite(out)) and np.all(out > 0)

    @given(cos_st, unit)
    def test_ggx_zero_fresnel(self, c, r):
        assert np.all(eval_ggx_specular(c, theta(roughness=r), 0.0) == 0.0)

    @pytest.mark.parametrize("gloss", [0.0, 0.3, 1.0])
    def test_clearcoat_distribution_at_normal(self, gloss):
        # at cos = 1 the clearcoat lobe is D_c * G_c * 0.2 / 4 with G_c = 1
        import mpmath as mp

        rc = mp.mpf("0.1") - mp.mpf("0.099") * mp.mpf(gloss)
        dc = (rc**2 - 1) / (2 * mp.pi * mp.log(rc) * rc**2)
        expect = float(dc * mp.mpf("0.2") / 4)
        assert eval_clearcoat(1.0, theta(clearcoat_glossiness=gloss)) == pytest.approx(expect, rel=1e-12)

    @given(theta_st.map(lambda a: np.clip(a, 0, 1)), cos_st)
    def test_matches_high_precision_oracle(self, th, c):
        np.testing.assert_allclose(eval_brdf(c, th), brdf_colocated(c, th), rtol=1e-9, atol=1e-300)

    def test_rejects_bad_theta(self):
        with pytest.raises(ValueError):
            eval_brdf(0.5, np.full(9, 1.5))

    def test_rejects_unnormalized_geometry(self):
        with pytest.raises(ValueError):
            eval_brdf(ShadingGeom(np.array([0, 0, 1.1]), np.array([0, 0, 1.0])), theta())


class TestProperties:
    @given(theta_st, cos_st)
    def test_non_negative_and_finite(self, th, c):
        out = eval_brdf(c, th)
        assert np.all(np.isfinite(out)) and np.all(out >= 0)

    @given(theta_st, cos_st, st.sampled_from([brdf.SUBSURFACE, brdf.METALLIC, brdf.DIELECTRIC, brdf.CLEARCOAT]))
    def test_affine_in_blend_weights(self, th, c, k):
        pts = []
        for w in (0.0, 0.4, 1.0):
            t = th.copy()
            t[k] = w
            pts.append(eval_brdf(c, t))
        np.testing.assert_allclose(pts[1], 0.6 * pts[0] + 0.4 * pts[2], rtol=1e-10, atol=1e-12)

    @given(theta_st, cos_st, unit)
    def test_gray_is_achromatic(self, th, c, g):
        th[:3] = g
        out = eval_brdf(c, th)
        assert out[0] == out[1] == out[2]

    @given(cos_st, unit)
    def test_clearcoat_is_achromatic(self, c, gloss):
        th = np.zeros(9)
        th[:3] = (0.9, 0.1, 0.4)
        th[brdf.CLEARCOAT_GLOSSINESS] = gloss
        th[brdf.CLEARCOAT] = 1.0
        base = th.copy()
        base[brdf.CLEARCOAT] = 0.0
        lobe = eval_brdf(c, th) - eval_brdf(c, base)
        np.testing.assert_allclose(lobe, lobe[0], rtol=1e-12)

    def test_batched_shapes(self, rng):
        th = rng.uniform(size=(5, 4, 9))
        c = rng.uniform(0.1, 1, size=(5, 4))
        assert eval_brdf(c, th).shape == (5, 4, 3)
        dth, dc = brdf_gradient(c, th)
        assert dth.shape == (5, 4, 3, 9) and dc.shape == (5, 4, 3)


def _fd_check(th, c, h=1e-5):
    dth, dc = brdf_gradient(c, th)
    worst = 0.0
    for k in range(9):
        tp, tm = th.copy(), th.copy()
        tp[k] += h
        tm[k] -= h
        fd = (eval_brdf(c, tp, validate=False) - eval_brdf(c, tm, validate=False)) / (2 * h)
        worst = max(worst, _rel(dth[:, k], fd))
    fd = (eval_brdf(c + h, th) - eval_brdf(c - h, th)) / (2 * h)
    return max(worst, _rel(dc, fd))


def _rel(a, b):
    mask = np.maximum(np.abs(a), np.abs(b)) > 1e-8
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(a - b)[mask] / np.maximum(np.abs(a), np.abs(b))[mask]))


class TestGradients:
    def test_metallic_partial_is_lobe_difference(self):
        th = theta(metallic=0.3).as_array()
        c = 0.7
        dth, _ = brdf_gradient(c, th)
        lobe_m = eval_ggx_specular(c, th, th[:3])
        lobe_d = eval_diffuse_lobes(c, th)
        np.testing.assert_allclose(dth[:, brdf.METALLIC], lobe_m - lobe_d, rtol=1e-12)

    def test_base_color_partial_lambert(self):
        dth, _ = brdf_gradient(1.0, theta().as_array())
        np.testing.assert_allclose(dth[:, :3], np.eye(3) / np.pi, atol=1e-15)

    def test_all_partials_at_half(self):
        assert _fd_check(np.full(9, 0.5), 0.8) < 1e-4

    @given(st.lists(inner, min_size=9, max_size=9).map(np.array), st.floats(0.05, 0.99))
    def test_random_points(self, th, c):
        assert _fd_check(th, c) < 1e-4

    def test_cos_partial_zero_under_clamp(self):
        _, dc = brdf_gradient(-0.3, theta().as_array())
        assert np.all(dc == 0.0)


class TestBidirectional:
    @given(theta_st, st.floats(0.01, 1.0))
    def test_reduces_to_colocated(self, th, c):
        np.testing.assert_allclose(eval_brdf_bidirectional(c, c, c, th), eval_brdf(c, th), rtol=1e-12)

    @given(st.floats(0.01, 1), st.floats(0.01, 1), st.floats(0.01, 1))
    def test_lambertian_configuration_is_constant(self, cl, cv, ch):
        th = theta(base_color=(0.2, 0.4, 0.6), roughness=0.25).as_array()
        np.testing.assert_allclose(eval_brdf_bidirectional(cl, cv, ch, th), th[:3] / np.pi, rtol=1e-12)

    @given(st.floats(0.01, 1), st.floats(0.01, 1), st.floats(0.01, 1), theta_st)
    def test_reciprocity(self, cl, cv, ch, th):
        np.testing.assert_allclose(eval_brdf_bidirectional(cl, cv, ch, th),
                                   eval_brdf_bidirectional(cv, cl, ch, th), rtol=1e-12)

    def test_gradients_match_fd(self, rng):
        h = 1e-6
        for _ in range(20):
            th = rng.uniform(0.05, 0.95, 9)
            cl, cv, ch = rng.uniform(0.1, 0.95, 3)
            _, dth, dl, dv, dh = eval_brdf_bidirectional(cl, cv, ch, th, want_grad=True)
            for k in range(9):
                tp, tm = th.copy(), th.copy()
                tp[k] += h
                tm[k] -= h
                fd = (eval_brdf_bidirectional(cl, cv, ch, tp) - eval_brdf_bidirectional(cl, cv, ch, tm)) / (2 * h)
                assert _rel(dth[:, k], fd) < 1e-5
            for d, args in ((dl, 0), (dv, 1), (dh, 2)):
                cp = [cl, cv, ch]
                cm = [cl, cv, ch]
                cp[args] += h
                cm[args] -= h
                fd = (eval_brdf_bidirectional(*cp, th) - eval_brdf_bidirectional(*cm, th)) / (2 * h)
                assert _rel(d, fd) < 1e-5
