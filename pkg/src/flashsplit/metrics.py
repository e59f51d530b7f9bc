"""Full-reference image quality metrics (numpy)."""

import numpy as np
from scipy import ndimage

from .errors import ContractError, ShapeError

PSNR_CAP = 60.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    return a, b


def mse(a, b, mask=None):
    a, b = _pair(a, b)
    err = (a - b) ** 2
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ContractError("empty evaluation mask")
        return float(err[mask].mean())
    return float(err.mean())


def psnr(a, b, peak=1.0, mask=None):
    """Peak signal-to-noise ratio in dB, clipped to ``[0, 60]``.

    Zero error reports the 60 dB cap.  ``mask`` (H, W) restricts the error to
    valid pixels.
    """
    if peak <= 0:
        raise ContractError("peak must be positive")
    e = mse(a, b, mask)
    if e == 0.0:
        return PSNR_CAP
    return float(np.clip(10.0 * np.log10(peak * peak / e), 0.0, PSNR_CAP))


def gaussian_taps(window=11, sigma=1.5):
    r = (window - 1) // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _blur(x, taps):
    y = ndimage.correlate1d(x, taps, axis=0, mode="reflect")
    return ndimage.correlate1d(y, taps, axis=1, mode="reflect")


def ssim_map(a, b, window=11, k1=0.01, k2=0.03, peak=1.0, sigma=1.5):
    """Per-position SSIM over valid window placements, shape (H-w+1, W-w+1, C)."""
    a, b = _pair(a, b)
    H, W = a.shape[:2]
    if H < window or W < window:
        raise ContractError(f"images {H}x{W} smaller than the {window}-pixel SSIM window")
    taps = gaussian_taps(window, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    r = (window - 1) // 2
    out = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx, my = _blur(x, taps), _blur(y, taps)
        sxx = _blur(x * x, taps) - mx * mx
        syy = _blur(y * y, taps) - my * my
        sxy = _blur(x * y, taps) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        out.append((num / den)[r:H - r, r:W - r])
    return np.stack(out, axis=-1)


def ssim(a, b, window=11, k1=0.01, k2=0.03, peak=1.0, mask=None):
    """Mean Gaussian-window SSIM (sigma 1.5), averaged over channels.

    With ``mask``, only window placements lying entirely inside the mask count.
    """
    m = ssim_map(a, b, window, k1, k2, peak)
    if mask is not None:
        r = (window - 1) // 2
        mask = np.asarray(mask, dtype=bool)
        inner = ndimage.binary_erosion(mask, structure=np.ones((window, window)), border_value=0)
        inner = inner[r:mask.shape[0] - r, r:mask.shape[1] - r]
        if inner.any():
            return float(np.clip(m[inner].mean(), -1.0, 1.0))
    return float(np.clip(m.mean(), -1.0, 1.0))
