import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from flashsplit.errors import ContractError, ShapeError
from flashsplit.losses import reconstruction_loss, ssim_torch
from flashsplit.metrics import PSNR_CAP, psnr, ssim


def sk_ssim(a, b):
    return structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                 data_range=1.0, channel_axis=-1)


def test_psnr_closed_forms():
    a = np.full((8, 8, 3), 0.5)
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a, np.full_like(a, 0.6)) == pytest.approx(20.0, abs=1e-9)
    for d in (0.01, 0.05, 0.2):
        assert psnr(a, a + d) == pytest.approx(20 * np.log10(1 / d), abs=1e-9)


def test_psnr_errors_and_mask():
    with pytest.raises(ShapeError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ContractError):
        psnr(np.zeros((4, 4)), np.zeros((4, 4)), peak=0)
    a, b = np.zeros((4, 4, 1)), np.zeros((4, 4, 1))
    b[0, 0] = 1.0
    m = np.ones((4, 4), bool)
    m[0, 0] = False
    assert psnr(a, b, mask=m) == PSNR_CAP
    assert 0.0 <= psnr(a, np.full_like(a, 5.0)) <= PSNR_CAP


@given(st.floats(1e-4, 0.5), st.floats(1e-4, 0.5))
def test_psnr_strictly_decreasing_in_mse(d1, d2):
    a = np.zeros((4, 4))
    if abs(d1 - d2) < 1e-9:
        return
    p1, p2 = psnr(a, a + d1), psnr(a, a + d2)
    assert (p1 > p2) == (d1 < d2)


def test_ssim_matches_skimage(rng):
    for _ in range(5):
        a = rng.random((32, 40, 3))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(sk_ssim(a, b), abs=1e-10)


def test_ssim_identity_symmetry_inversion(rng):
    a = rng.random((24, 24, 3))
    b = rng.random((24, 24, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, b) == ssim(b, a)
    assert ssim(a, 1 - a) < 0.5
    assert sk_ssim(a, 1 - a) < 0.5


def test_ssim_too_small():
    with pytest.raises(ContractError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_metrics_permutation_invariant_over_samples(rng):
    imgs = [rng.random((16, 16, 3)) for _ in range(4)]
    refs = [rng.random((16, 16, 3)) for _ in range(4)]
    vals = [psnr(a, b) for a, b in zip(imgs, refs)]
    perm = [2, 0, 3, 1]
    assert sorted(vals) == sorted(psnr(imgs[i], refs[i]) for i in perm)


def test_ssim_torch_matches_numpy(rng):
    a = rng.random((20, 22, 3))
    b = rng.random((20, 22, 3))
    t = lambda x: torch.from_numpy(x.transpose(2, 0, 1)[None].copy())
    assert float(ssim_torch(t(a), t(b))) == pytest.approx(ssim(a, b), abs=1e-10)


def test_reconstruction_loss_weights(rng):
    a = torch.from_numpy(rng.random((2, 3, 16, 16)))
    b = torch.from_numpy(rng.random((2, 3, 16, 16)))
    total, parts = reconstruction_loss(a, b)
    assert float(total) == pytest.approx(parts["l1"] + parts["dssim"], abs=1e-12)
    total_p, parts_p = reconstruction_loss(a, b, perceptual=lambda x, y: (x - y).pow(2).mean())
    assert float(total_p) == pytest.approx(parts_p["l1"] + parts_p["dssim"] + parts_p["perceptual"], abs=1e-12)
