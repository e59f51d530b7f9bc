import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flashsplit.datatypes import CapturePair, FlashSceneSpec, WarpParams
from flashsplit.errors import ContractError, DegenerateInputError
from flashsplit.metrics import psnr
from flashsplit.scene import flash_boost, flash_difference, generate_scene, render_pair
from flashsplit.warp import (apply_warp, artifact_energy, baseline_prealign_difference, estimate_translation,
                             jitter_homography, make_misaligned_pair, naive_difference, sample_misalignment)


def test_identity_warp_bit_exact(small_scene):
    out, mask = apply_warp(small_scene.transmission, WarpParams.identity())
    assert np.array_equal(out, small_scene.transmission) and mask.all()


def test_identity_must_be_neutral():
    with pytest.raises(ContractError):
        WarpParams(kind="identity", translation=(1, 0))


def test_singular_homography_rejected():
    with pytest.raises(ContractError):
        WarpParams(kind="homography", homography=np.zeros((3, 3)) + np.eye(3) * [1, 0, 1])


def test_integer_translation_circular_is_roll(small_scene):
    out, mask = apply_warp(small_scene.transmission, WarpParams.shift(3, 5), pad="circular")
    assert np.array_equal(out, np.roll(small_scene.transmission, (5, 3), axis=(0, 1)))
    assert mask.all()


@given(st.floats(-6, 6), st.floats(-6, 6), st.floats(-6, 6), st.floats(-6, 6))
def test_translation_composition_circular(a, b, c, d):
    img = np.random.default_rng(0).random((16, 16, 1))
    # integer parts compose exactly under circular padding; fractional parts go through
    # bilinear interpolation twice, so compare integer shifts only
    a, b, c, d = (float(round(v)) for v in (a, b, c, d))
    one, _ = apply_warp(img, WarpParams.shift(a, b), pad="circular")
    two, _ = apply_warp(one, WarpParams.shift(c, d), pad="circular")
    direct, _ = apply_warp(img, WarpParams.shift(a + c, b + d), pad="circular")
    np.testing.assert_allclose(two, direct, atol=1e-12)


def test_homography_round_trip_interior():
    errs = []
    for s in range(10):
        spec = generate_scene(s)
        Hm = jitter_homography(np.random.default_rng(s), spec.shape, 3.0, 0.03, 1e-4)
        fwd, _ = apply_warp(spec.transmission, WarpParams(kind="homography", homography=Hm))
        back, _ = apply_warp(fwd, WarpParams(kind="homography", homography=np.linalg.inv(Hm)))
        errs.append(np.abs(back - spec.transmission)[8:-8, 8:-8].mean())
    assert np.mean(errs) < 2e-2


def test_parallax_constant_depth_equals_translation(small_scene):
    w_par = WarpParams(kind="parallax", camera_shift=(3.0, -2.0))
    w_tr = WarpParams.shift(1.5, -1.0)
    a, _ = apply_warp(small_scene.transmission, w_par, depth=np.full((64, 64), 2.0))
    b, _ = apply_warp(small_scene.transmission, w_tr)
    assert np.max(np.abs(a - b)[4:-4, 4:-4]) <= 1e-6


def test_parallax_needs_depth(small_scene):
    with pytest.raises(ContractError):
        apply_warp(small_scene.transmission, WarpParams(kind="parallax", camera_shift=(1, 0)))


def test_validity_mask_marks_outside_sources(small_scene):
    _, mask = apply_warp(small_scene.transmission, WarpParams.shift(4, 0))
    assert not mask[:, :4].any() and mask[:, 4:].all()


def test_misaligned_pair_keeps_no_flash(small_scene):
    pair = make_misaligned_pair(small_scene, WarpParams.shift(2, 1))
    assert np.array_equal(pair.no_flash, render_pair(small_scene).no_flash)
    assert pair.misalignment.kind == "translation"


def test_aligned_pair_difference_is_theta_t(small_scene):
    pair = make_misaligned_pair(small_scene, WarpParams.identity())
    assert np.max(np.abs(flash_difference(pair) - flash_boost(small_scene))) <= 1e-6


def test_artifact_energy_grows_with_shift():
    e0, e4 = [], []
    for s in range(10):
        spec = generate_scene(s)
        e0.append(artifact_energy(make_misaligned_pair(spec, WarpParams.identity()), spec))
        e4.append(artifact_energy(make_misaligned_pair(spec, WarpParams.shift(4, 0)), spec))
    assert max(e0) < 1e-12 and np.mean(e4) > 1e-3


def test_artifact_energy_non_decreasing_in_magnitude():
    means = []
    for mag in (0, 1, 2, 4, 6):
        vals = []
        for s in range(12):
            spec = generate_scene(100 + s)
            w = WarpParams.identity() if mag == 0 else WarpParams.shift(mag, 0)
            vals.append(artifact_energy(make_misaligned_pair(spec, w), spec))
        means.append(np.mean(vals))
    assert all(b >= a for a, b in zip(means, means[1:]))


def test_estimate_translation_circular_exact(small_scene):
    b = np.roll(small_scene.transmission, (5, 3), axis=(0, 1))
    assert estimate_translation(small_scene.transmission, b, window=False) == (3.0, 5.0)
    assert estimate_translation(small_scene.transmission, small_scene.transmission) == (0.0, 0.0)


def test_estimate_translation_constant_image():
    with pytest.raises(DegenerateInputError):
        estimate_translation(np.ones((16, 16, 3)), np.ones((16, 16, 3)))


def test_estimate_translation_on_flash_pairs():
    hits = 0
    for s in range(50):
        spec = generate_scene(s)
        spec = FlashSceneSpec(spec.transmission, spec.reflection, spec.depth_t, spec.gamma, 1.0, s)
        pair = make_misaligned_pair(spec, WarpParams.shift(3, 0))
        dx, dy = estimate_translation(pair.no_flash, pair.flash)
        hits += abs(dx - 3) <= 1 and abs(dy) <= 1
    assert hits >= 40


def test_prealign_aligned_equals_flash_difference():
    for s in range(10):
        spec = generate_scene(s)
        pair = make_misaligned_pair(spec, WarpParams.identity())
        est, mask = baseline_prealign_difference(pair)
        assert np.array_equal(est, flash_difference(pair)) and mask.all()


def test_prealign_beats_naive_on_shifted_corpus():
    gain = []
    for s in range(30):
        spec = generate_scene(200 + s)
        pair = make_misaligned_pair(spec, WarpParams.shift(4, -2))
        est, m = baseline_prealign_difference(pair)
        nv, _ = naive_difference(pair)
        ref = flash_boost(spec)
        mm = m & pair.mask()
        gain.append(psnr(est, ref, peak=spec.theta, mask=mm) - psnr(nv, ref, peak=spec.theta, mask=mm))
    assert np.mean(gain) > 0


def test_prealign_constant_scene_raises():
    shape = (16, 16, 3)
    spec = FlashSceneSpec(np.full(shape, 0.3), np.full(shape, 0.2), np.ones(shape[:2]), 0.5, 1.0)
    with pytest.raises(DegenerateInputError):
        baseline_prealign_difference(render_pair(spec))


def test_prealign_rejects_tonemapped(small_scene):
    with pytest.raises(ContractError):
        baseline_prealign_difference(render_pair(small_scene, tonemapped=True))


def test_sample_misalignment_magnitude(small_scene):
    rng = np.random.default_rng(0)
    for kind in ("parallax", "homography"):
        w = sample_misalignment(rng, small_scene.shape, magnitude=4.0, kind=kind, jitter=False)
        assert w.magnitude_label == 4.0
    w = sample_misalignment(rng, small_scene.shape, magnitude=4.0, kind="parallax", jitter=False, depth_min=1.0)
    assert abs(np.hypot(*w.camera_shift) - 4.0) < 1e-12


def test_warp_params_dict_round_trip():
    w = sample_misalignment(np.random.default_rng(3), (64, 64, 3))
    w2 = WarpParams.from_dict(w.to_dict())
    assert w2.kind == w.kind and np.array_equal(w2.homography, w.homography)
    assert w2.camera_shift == w.camera_shift
