"""Flash/no-flash misalignment simulation and classical registration baselines."""

import numpy as np

from .datatypes import CapturePair, WarpParams
from .errors import ContractError, DegenerateInputError, ShapeError
from .kernels import PAD_CIRCULAR, PAD_CLAMP, PAD_ZERO, bilinear_sample
from .scene import compose_flash, compose_no_flash, flash_boost, flash_difference, tonemap

# sub-pixel noise floor of the parabolic peak fit on flash/no-flash pairs
SNAP_TOL = 0.05

_PADS = {"clamp": PAD_CLAMP, "circular": PAD_CIRCULAR, "zero": PAD_ZERO}


def _pixel_grid(H, W):
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    return xx, yy


def _apply_inverse_homography(Hinv, xx, yy):
    den = Hinv[2, 0] * xx + Hinv[2, 1] * yy + Hinv[2, 2]
    sx = (Hinv[0, 0] * xx + Hinv[0, 1] * yy + Hinv[0, 2]) / den
    sy = (Hinv[1, 0] * xx + Hinv[1, 1] * yy + Hinv[1, 2]) / den
    return sx, sy


def source_coordinates(w, shape, depth=None):
    """Per-pixel source coordinates (x, y) realizing warp ``w``.

    The output pixel q samples the input at ``src(q)``; content therefore moves
    by ``+translation`` / ``+camera_shift / depth``.  Parallax uses the depth at
    the output pixel, which is exact for constant depth.
    """
    H, W = shape[:2]
    xx, yy = _pixel_grid(H, W)
    if w.kind == "identity":
        return xx, yy
    if w.kind == "translation":
        return xx - w.translation[0], yy - w.translation[1]
    if w.kind == "homography":
        return _apply_inverse_homography(np.linalg.inv(w.homography), xx, yy)
    if depth is None:
        raise ContractError("parallax warp requires a depth map")
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (H, W):
        raise ShapeError(f"depth map {depth.shape} does not match image {(H, W)}")
    if not np.array_equal(w.homography, np.eye(3)):
        xx, yy = _apply_inverse_homography(np.linalg.inv(w.homography), xx, yy)
    sx, sy = w.camera_shift
    return xx - sx / depth, yy - sy / depth


def apply_warp(img, w, depth=None, pad="clamp"):
    """Warp ``img`` by ``w`` with bilinear resampling.

    Returns ``(warped, valid)`` where ``valid`` marks pixels whose source lies
    inside the frame.  The identity warp returns an exact copy.
    """
    img = np.asarray(img, dtype=np.float64)
    if w.kind == "parallax" and depth is None:
        raise ContractError("parallax warp requires a depth map")
    if w.kind == "identity":
        return img.copy(), np.ones(img.shape[:2], dtype=bool)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    sx, sy = source_coordinates(w, img.shape, depth)
    out, mask = bilinear_sample(img, sx, sy, _PADS[pad])
    if squeeze:
        out = out[..., 0]
    return out, mask


def make_misaligned_pair(spec, w, tonemapped=False, pad="clamp"):
    """Capture pair whose flash image is seen from a viewpoint displaced by ``w``.

    The no-flash image stays in the reference frame of the ground truth.
    """
    no_flash = compose_no_flash(spec)
    flash, valid = apply_warp(compose_flash(spec), w, spec.depth_t, pad=pad)
    flash = np.maximum(flash, 0.0)
    if tonemapped:
        no_flash, flash = tonemap(no_flash), tonemap(flash)
    return CapturePair(no_flash, flash, w, tonemapped=tonemapped, scene_ref=spec.seed, valid=valid)


def jitter_homography(rng, shape, max_rot_deg=1.0, max_scale=0.01, max_persp=2e-5):
    """Small random homography about the image center."""
    H, W = shape[:2]
    cx, cy = (W - 1) / 2, (H - 1) / 2
    a = np.deg2rad(rng.uniform(-max_rot_deg, max_rot_deg))
    s = 1.0 + rng.uniform(-max_scale, max_scale)
    A = np.array([[s * np.cos(a), -s * np.sin(a), 0.0], [s * np.sin(a), s * np.cos(a), 0.0], [0.0, 0.0, 1.0]])
    A[2, :2] = rng.uniform(-max_persp, max_persp, 2)
    C = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1.0]])
    Ci = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1.0]])
    M = C @ A @ Ci
    return M / M[2, 2]


def sample_misalignment(rng, shape, max_shift=6.0, depth_min=1.0, kind="parallax", jitter=True, magnitude=None):
    """Random handshake misalignment.

    ``magnitude`` (default ``U[0, max_shift]``) is the largest displacement in
    pixels, reached at ``depth_min`` for parallax warps.
    """
    m = float(rng.uniform(0.0, max_shift)) if magnitude is None else float(magnitude)
    ang = rng.uniform(0, 2 * np.pi)
    d = (m * np.cos(ang), m * np.sin(ang))
    Hj = jitter_homography(rng, shape) if jitter else np.eye(3)
    if kind == "parallax":
        return WarpParams(kind="parallax", camera_shift=(d[0] * depth_min, d[1] * depth_min),
                          homography=Hj, magnitude_label=m)
    if kind == "translation" and not jitter:
        return WarpParams(kind="translation", translation=d, magnitude_label=m)
    T = np.array([[1, 0, d[0]], [0, 1, d[1]], [0, 0, 1.0]])
    return WarpParams(kind="homography", homography=T @ Hj, magnitude_label=m)


# --------------------------------------------------------------------------
# registration baselines
# --------------------------------------------------------------------------

def _gray(img):
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=2) if img.ndim == 3 else img


def _parabolic(cm, c0, cp):
    den = cm - 2.0 * c0 + cp
    if abs(den) < 1e-15:
        return 0.0
    off = 0.5 * (cm - cp) / den
    return float(np.clip(off, -0.5, 0.5))


def estimate_translation(a, b, window=True, snap=SNAP_TOL):
    """Phase-correlation estimate of the shift taking ``a`` to ``b``.

    Returns ``(dx, dy)`` such that ``b(x) ~ a(x - (dx, dy))``; a circular shift
    by integers is recovered exactly.  A Hann window suppresses the border
    discontinuity for non-periodic content.  Parabolic sub-pixel offsets
    smaller than ``snap`` are treated as zero.
    """
    ga, gb = _gray(a), _gray(b)
    if ga.shape != gb.shape:
        raise ShapeError(f"shape mismatch {ga.shape} vs {gb.shape}")
    if np.ptp(ga) < 1e-12 or np.ptp(gb) < 1e-12:
        raise DegenerateInputError("cannot register a constant image")
    ga = ga - ga.mean()
    gb = gb - gb.mean()
    if window:
        win = np.outer(np.hanning(ga.shape[0]), np.hanning(ga.shape[1]))
        ga, gb = ga * win, gb * win
    Fa, Fb = np.fft.fft2(ga), np.fft.fft2(gb)
    cross = Fb * np.conj(Fa)
    cross /= np.maximum(np.abs(cross), 1e-15)
    corr = np.real(np.fft.ifft2(cross))
    H, W = corr.shape
    py, px = np.unravel_index(np.argmax(corr), corr.shape)
    offx = _parabolic(corr[py, (px - 1) % W], corr[py, px], corr[py, (px + 1) % W])
    offy = _parabolic(corr[(py - 1) % H, px], corr[py, px], corr[(py + 1) % H, px])
    offx = 0.0 if abs(offx) < snap else offx
    offy = 0.0 if abs(offy) < snap else offy
    dx = px if px < W / 2 else px - W
    dy = py if py < H / 2 else py - H
    return float(dx + offx), float(dy + offy)


def baseline_prealign_difference(pair):
    """Register the flash image onto the no-flash image by a global translation,
    then take the flash difference.

    Returns ``(transmission_estimate, valid_mask)``.
    """
    if pair.tonemapped:
        raise ContractError("pre-align baseline requires a linear pair")
    dx, dy = estimate_translation(pair.no_flash, pair.flash)
    back = WarpParams.shift(-dx, -dy) if (dx, dy) != (0.0, 0.0) else WarpParams.identity()
    aligned, m = apply_warp(pair.flash, back)
    valid_src = pair.mask().astype(np.float64)
    vm, _ = apply_warp(valid_src, back)
    mask = m & (vm >= 1.0 - 1e-9)
    aligned_pair = CapturePair(pair.no_flash, np.maximum(aligned, 0.0), WarpParams.identity(), scene_ref=pair.scene_ref)
    return flash_difference(aligned_pair), mask


def naive_difference(pair):
    """Flash difference with no registration; returns ``(estimate, valid_mask)``."""
    return flash_difference(pair), pair.mask().copy()


def artifact_energy(pair, spec):
    """Mean absolute deviation of the flash difference from ``theta * T`` over valid pixels."""
    diff = flash_difference(pair)
    m = pair.mask()
    return float(np.abs(diff - flash_boost(spec))[m].mean())


__all__ = [
    "apply_warp",
    "artifact_energy",
    "baseline_prealign_difference",
    "estimate_translation",
    "jitter_homography",
    "make_misaligned_pair",
    "naive_difference",
    "sample_misalignment",
    "source_coordinates",
]
