import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from support import natural_image
from trifuse.core.exceptions import ArgumentError, ShapeError
from trifuse.services.wavelet import DetailBands, WaveletPyramid, dwt2, idwt2

dims = st.integers(min_value=8, max_value=41)
levels = st.integers(min_value=1, max_value=3)


def test_two_by_two_example():
    pyr = dwt2(np.array([[1.0, 2.0], [3.0, 4.0]]), 1)
    bands = pyr.details[0]
    assert pyr.approx[0, 0, 0] == pytest.approx(5.0)
    assert bands.h[0, 0, 0] == pytest.approx(-1.0)
    assert bands.v[0, 0, 0] == pytest.approx(-2.0)
    assert bands.d[0, 0, 0] == pytest.approx(0.0)


@settings(max_examples=40, deadline=None)
@given(h=dims, w=dims, k=levels, seed=st.integers(0, 2**16))
def test_reconstruction_and_energy_on_any_size(h, w, k, seed):
    img = np.random.default_rng(seed).random((h, w, 3))
    pyr = dwt2(img, k)
    np.testing.assert_allclose(idwt2(pyr), img, atol=1e-6, rtol=0)
    energy = float(np.sum(img ** 2))
    assert abs(pyr.coefficient_energy() - energy) <= 1e-5 * energy


def test_reconstruction_on_natural_images():
    for seed in range(100):
        img = natural_image(seed, 48 + seed % 5, 40 + seed % 3)
        k = 1 + seed % 3
        assert np.max(np.abs(idwt2(dwt2(img, k)) - img)) <= 1e-6


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_transform_is_linear(seed, a, b):
    gen = np.random.default_rng(seed)
    x, y = gen.random((19, 22, 1)), gen.random((19, 22, 1))
    px, py, pz = dwt2(x, 2), dwt2(y, 2), dwt2(a * x + b * y, 2)
    np.testing.assert_allclose(pz.approx, a * px.approx + b * py.approx, atol=1e-9)
    for bx, by, bz in zip(px.details, py.details, pz.details):
        for cx, cy, cz in zip(bx.as_tuple(), by.as_tuple(), bz.as_tuple()):
            np.testing.assert_allclose(cz, a * cx + b * cy, atol=1e-9)


def test_constant_image_has_no_detail():
    pyr = dwt2(np.full((16, 16, 3), 0.25), 2)
    for bands in pyr.details:
        for band in bands.as_tuple():
            np.testing.assert_allclose(band, 0.0, atol=1e-12)
    np.testing.assert_allclose(pyr.approx, 0.25 * 4, atol=1e-12)


def test_band_shapes_follow_ceil_halving():
    pyr = dwt2(np.zeros((17, 30, 3)), 3)
    assert [b.v.shape[:2] for b in pyr.details] == [(9, 15), (5, 8), (3, 4)]
    assert pyr.approx.shape == (3, 4, 3)
    assert pyr.sizes == [(17, 30), (9, 15), (5, 8)]


def test_scaled_pyramid_scales_reconstruction():
    img = natural_image(0, 32, 32)
    np.testing.assert_allclose(idwt2(dwt2(img, 2).scaled(0.5)), 0.5 * img, atol=1e-6)


def test_invalid_arguments():
    with pytest.raises(ArgumentError):
        dwt2(np.zeros((16, 16)), 0)
    with pytest.raises(ArgumentError):
        dwt2(np.zeros((16, 16)), 4)
    with pytest.raises(ArgumentError):
        dwt2(np.zeros((6, 16)), 3)
    with pytest.raises(ShapeError):
        dwt2(np.zeros((4, 4, 3, 2)), 1)
    pyr = dwt2(np.zeros((8, 8, 1)), 1)
    broken = WaveletPyramid(levels=1, approx=pyr.approx, details=[
        DetailBands(pyr.details[0].v, pyr.details[0].h, np.zeros((3, 3, 1)))
    ], sizes=pyr.sizes)
    with pytest.raises(ShapeError):
        idwt2(broken)


def test_odd_size_boundary_coefficients():
    c = 0.4
    pyr = dwt2(np.full((3, 5, 1), c), 1)
    r2 = np.sqrt(2.0)
    expected = np.array([[2 * c, 2 * c, r2 * c], [r2 * c, r2 * c, c]])
    np.testing.assert_allclose(pyr.approx[..., 0], expected, atol=1e-12)
    for band in pyr.details[0].as_tuple():
        np.testing.assert_allclose(band, 0.0, atol=1e-12)
    assert pyr.coefficient_energy() == pytest.approx(15 * c * c)
    np.testing.assert_allclose(idwt2(pyr), np.full((3, 5, 1), c), atol=1e-12)
