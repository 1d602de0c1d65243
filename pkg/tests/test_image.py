"""Sampling, gradients and image I/O."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image as PILImage

from proxyba.errors import OutOfBounds
from proxyba.image import (
    Image,
    Intrinsics,
    PatchPattern,
    bilinear_px,
    gradient_px,
    image_gradient,
    load_image,
    quantize,
    read_pgm,
    sample_bilinear,
    write_pgm,
)

K = Intrinsics(100.0, 120.0, 20.0, 15.0)


def naive_bilinear(data, u, v):
    """Textbook four-neighbour interpolation, one sample at a time."""
    i, j = int(np.floor(u)), int(np.floor(v))
    a, b = u - i, v - j
    return ((1 - a) * (1 - b) * data[j, i] + a * (1 - b) * data[j, i + 1]
            + (1 - a) * b * data[j + 1, i] + a * b * data[j + 1, i + 1])


@given(st.floats(0, 38), st.floats(0, 28))
def test_bilinear_matches_naive_interpolation(u, v):
    data = np.random.default_rng(0).random((30, 40))
    value, valid = bilinear_px(data, u, v)
    assert valid
    assert value == pytest.approx(naive_bilinear(data, u, v), abs=1e-14)


def test_bilinear_reproduces_bilinear_functions_exactly():
    vv, uu = np.mgrid[0:30, 0:40].astype(float)
    data = 0.2 + 0.01 * uu - 0.02 * vv + 0.001 * uu * vv
    u = np.array([0.0, 3.3, 17.75, 38.0])
    v = np.array([0.0, 4.9, 11.2, 28.0])
    value, valid = bilinear_px(data, u, v)
    assert valid.all()
    assert np.allclose(value, 0.2 + 0.01 * u - 0.02 * v + 0.001 * u * v, atol=1e-14)


def test_bilinear_valid_region_and_stacked_frames():
    data = np.stack([np.zeros((5, 6)), np.ones((5, 6))])
    value, valid = bilinear_px(data, np.array([0.0, 4.0, 4.01, -0.01]),
                               np.array([3.0, 0.0, 1.0, 1.0]), np.array([1, 1, 0, 0]))
    assert valid.tolist() == [True, True, False, False]
    assert value[:2].tolist() == [1.0, 1.0]


def test_gradient_is_exact_for_quadratics():
    vv, uu = np.mgrid[0:30, 0:40].astype(float)
    data = 0.3 + 0.02 * uu + 0.01 * vv + 1e-3 * uu**2 - 2e-3 * vv**2 + 5e-4 * uu * vv
    u = np.array([5.0, 12.3, 20.5])
    v = np.array([5.0, 7.7, 14.25])
    gu, gv, valid = gradient_px(data, u, v)
    assert valid.all()
    assert np.allclose(gu, 0.02 + 2e-3 * u + 5e-4 * v, atol=1e-13)
    assert np.allclose(gv, 0.01 - 4e-3 * v + 5e-4 * u, atol=1e-13)


def test_normalized_sampling_and_gradient_chain_rule():
    vv, uu = np.mgrid[0:30, 0:40].astype(float)
    img = Image(0.1 + 0.01 * uu + 0.02 * vv, K)
    x = K.to_normalized(np.array([10.25, 12.5]))
    assert sample_bilinear(img, x) == pytest.approx(0.1 + 0.1025 + 0.25)
    assert np.allclose(image_gradient(img, x), [0.01 * K.fx, 0.02 * K.fy])


def test_out_of_bounds_raises():
    img = Image(np.zeros((10, 10)), K)
    with pytest.raises(OutOfBounds):
        sample_bilinear(img, K.to_normalized(np.array([9.5, 2.0])))
    with pytest.raises(OutOfBounds):
        image_gradient(img, K.to_normalized(np.array([0.2, 2.0])))


def test_intrinsics_round_trip():
    uv = np.array([[3.0, 4.0], [100.5, -2.0]])
    assert np.allclose(K.to_pixel(K.to_normalized(uv)), uv)


def test_image_validation():
    with pytest.raises(ValueError):
        Image(np.zeros((2, 2, 3)), K)
    with pytest.raises(ValueError):
        Image(np.array([[np.nan]]), K)


def test_patch_pattern():
    p = PatchPattern.square(2)
    assert len(p) == 25 and p.radius == 2
    assert p.offsets[p.center_index].tolist() == [0, 0]
    with pytest.raises(ValueError):
        PatchPattern(np.array([[1, 0]]))
    with pytest.raises(ValueError):
        PatchPattern(np.array([[0, 0], [0, 0]]))


@pytest.mark.parametrize("bits", [8, 16])
def test_quantize_levels(bits):
    levels = (1 << bits) - 1
    q = quantize(np.array([-0.5, 0.0, 0.3, 1.0, 2.0]), bits)
    assert np.allclose(q * levels, np.rint(q * levels))
    assert q[0] == 0.0 and q[-1] == 1.0
    assert abs(q[2] - 0.3) <= 0.5 / levels


@pytest.mark.parametrize("bits", [8, 16])
def test_pgm_round_trip(tmp_path, bits):
    data = quantize(np.random.default_rng(1).random((7, 9)), bits)
    write_pgm(tmp_path / "a.pgm", data, bits)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), data)


def test_pgm_header_comments(tmp_path):
    pixels = np.arange(6, dtype=np.uint8).reshape(2, 3)
    (tmp_path / "c.pgm").write_bytes(b"P5\n# comment\n3 2\n# another\n255\n" + pixels.tobytes())
    assert np.array_equal(read_pgm(tmp_path / "c.pgm") * 255, pixels)


def test_png_loading(tmp_path):
    pixels = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    PILImage.fromarray(pixels).save(tmp_path / "g.png")
    img = load_image(tmp_path / "g.png", K)
    assert np.allclose(img.data * 255, pixels)
    wide = (np.arange(12, dtype=np.uint16).reshape(3, 4) * 5000)
    PILImage.fromarray(wide).save(tmp_path / "w.png")
    assert np.allclose(load_image(tmp_path / "w.png", K).data * 65535, wide)
