import numpy as np
import pytest

from flashlit.hdr import (HdrImage, read_pfm, read_png, srgb_decode, srgb_encode, to_uint8, tonemap,
                          write_pfm, write_png8, write_png16)


def test_pfm_round_trip_rgb(tmp_path, rng):
    img = rng.uniform(0, 5, (7, 5, 3)).astype(np.float32)
    write_pfm(tmp_path / "a.pfm", img)
    np.testing.assert_array_equal(read_pfm(tmp_path / "a.pfm"), img)


def test_pfm_round_trip_gray(tmp_path, rng):
    img = rng.uniform(size=(4, 6)).astype(np.float32)
    write_pfm(tmp_path / "g.pfm", img)
    np.testing.assert_array_equal(read_pfm(tmp_path / "g.pfm"), img)


def test_pfm_layout_is_bottom_up_little_endian(tmp_path):
    img = np.zeros((2, 1, 3), dtype=np.float32)
    img[0] = 1.0                     # top row
    write_pfm(tmp_path / "o.pfm", img)
    raw = (tmp_path / "o.pfm").read_bytes()
    header_end = raw.index(b"-1.0\n") + 5
    body = np.frombuffer(raw[header_end:], dtype="<f4").reshape(2, 3)
    assert raw.startswith(b"PF\n1 2\n")
    np.testing.assert_array_equal(body[1], 1.0)   # first stored row is the bottom one
    np.testing.assert_array_equal(body[0], 0.0)


def test_pfm_rejects_garbage(tmp_path):
    (tmp_path / "x.pfm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(ValueError):
        read_pfm(tmp_path / "x.pfm")


def test_srgb_half_is_188():
    assert to_uint8(srgb_encode(0.5)) == 188


def test_srgb_inverse(rng):
    x = rng.uniform(size=1000)
    np.testing.assert_allclose(srgb_decode(srgb_encode(x)), x, atol=1e-12)


def test_tonemap_range(rng):
    out = tonemap(rng.uniform(0, 100, (4, 4, 3)))
    assert out.min() >= 0 and out.max() < 1
    assert tonemap(np.ones((1, 1, 3)))[0, 0, 0] == pytest.approx(0.5 ** (1 / 2.2))


def test_png16_round_trip(tmp_path, rng):
    x = rng.uniform(size=(5, 4, 3))
    write_png16(tmp_path / "n.png", x)
    np.testing.assert_allclose(read_png(tmp_path / "n.png"), x, atol=0.5 / 65535 + 1e-12)


def test_png8_round_trip(tmp_path, rng):
    x = rng.uniform(size=(5, 4))
    write_png8(tmp_path / "s.png", x)
    np.testing.assert_allclose(read_png(tmp_path / "s.png"), x, atol=0.5 / 255 + 1e-12)


def test_hdr_image_validation():
    with pytest.raises(ValueError):
        HdrImage(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        HdrImage(np.zeros((4, 4, 3)), mask=np.zeros((3, 4)))
