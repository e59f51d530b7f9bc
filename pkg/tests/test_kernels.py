import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from flashsplit import kernels
from flashsplit._accel import HAS_NUMBA
from flashsplit.kernels import PAD_CIRCULAR, PAD_CLAMP, PAD_ZERO, SHAPE_CIRCLE, SHAPE_RECT, SHAPE_TRIANGLE

needs_numba = pytest.mark.skipif(not HAS_NUMBA, reason="numba not installed")


def _coords(rng, H, W, spread=3.0):
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    return xx + rng.uniform(-spread, spread, (H, W)), yy + rng.uniform(-spread, spread, (H, W))


def _scipy_reference(img, sx, sy, mode):
    # map_coordinates with order=1 is an independent bilinear resampler
    return np.stack([ndimage.map_coordinates(img[..., c], [sy, sx], order=1, mode=mode) for c in range(img.shape[2])],
                    axis=-1)


@pytest.mark.parametrize("impl", ["np", pytest.param("nb", marks=needs_numba)])
@pytest.mark.parametrize("pad,mode", [(PAD_CLAMP, "nearest"), (PAD_CIRCULAR, "grid-wrap"), (PAD_ZERO, "grid-constant")])
def test_bilinear_matches_scipy(impl, pad, mode, rng):
    img = rng.random((12, 15, 3))
    sx, sy = _coords(rng, 12, 15)
    fn = kernels._bilinear_sample_np if impl == "np" else kernels._bilinear_sample_nb
    out, mask = fn(img, sx, sy, pad)
    np.testing.assert_allclose(out, _scipy_reference(img, sx, sy, mode), atol=1e-12)
    inside = (sx >= 0) & (sx <= 14) & (sy >= 0) & (sy <= 11)
    if pad == PAD_CIRCULAR:
        assert mask.all()
    else:
        assert np.array_equal(mask, inside)


@needs_numba
@given(st.integers(0, 2 ** 31), st.sampled_from([PAD_CLAMP, PAD_CIRCULAR, PAD_ZERO]))
def test_bilinear_numba_equals_numpy(seed, pad):
    r = np.random.default_rng(seed)
    img = r.random((9, 11, 2))
    sx, sy = _coords(r, 9, 11, spread=5.0)
    a, ma = kernels._bilinear_sample_np(img, sx, sy, pad)
    b, mb = kernels._bilinear_sample_nb(img, sx, sy, pad)
    np.testing.assert_allclose(a, b, atol=1e-13)
    assert np.array_equal(ma, mb)


def _shapes():
    return np.array([
        [SHAPE_CIRCLE, 10, 12, 6, 0, 0, 0, 1.0, 0.0, 0.0, 1.5],
        [SHAPE_RECT, 20, 20, 5, 3, 0.4, 0, 0.0, 1.0, 0.0, 1.2],
        [SHAPE_TRIANGLE, 2, 2, 15, 4, 6, 14, 0.0, 0.0, 1.0, 1.1],
    ])


def _prepared():
    s = _shapes()
    ang = s[1, 5]
    s[1, 5], s[1, 6] = np.cos(ang), np.sin(ang)
    return s


@needs_numba
def test_rasterize_numba_equals_numpy():
    bg = np.full((32, 32, 3), 0.2)
    depth = np.full((32, 32), 2.5)
    a, da = kernels._rasterize_np(bg, depth, _prepared(), 4)
    b, db = kernels._rasterize_nb(bg, depth, _prepared(), 4)
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert np.array_equal(da, db)


def test_rasterize_coverage_and_depth():
    bg = np.zeros((32, 32, 3))
    out, depth = kernels.rasterize_shapes(bg, np.full((32, 32), 2.5), _shapes()[:1], supersample=8)
    # anti-aliased disc area approximates pi r^2
    assert abs(out[..., 0].sum() - np.pi * 36) < 2.0
    assert depth[12, 10] == 1.5 and depth[0, 31] == 2.5
    assert out.min() >= 0 and out.max() <= 1


def test_rasterize_painter_order():
    s = np.array([[SHAPE_CIRCLE, 8, 8, 5, 0, 0, 0, 1, 0, 0, 2.0],
                  [SHAPE_CIRCLE, 8, 8, 3, 0, 0, 0, 0, 1, 0, 1.0]])
    out, depth = kernels.rasterize_shapes(np.zeros((16, 16, 3)), np.full((16, 16), 3.0), s)
    assert np.allclose(out[8, 8], [0, 1, 0]) and depth[8, 8] == 1.0
