"""Differentiable image losses (torch, NCHW)."""

import torch
import torch.nn.functional as F

from .metrics import gaussian_taps


def ssim_torch(a, b, window=11, k1=0.01, k2=0.03, peak=1.0):
    """Mean Gaussian-window SSIM over valid positions; same definition as
    :func:`flashsplit.metrics.ssim`."""
    C = a.shape[1]
    g = torch.as_tensor(gaussian_taps(window), dtype=a.dtype, device=a.device)
    kx = g.view(1, 1, 1, -1).repeat(C, 1, 1, 1)
    ky = g.view(1, 1, -1, 1).repeat(C, 1, 1, 1)

    def blur(x):
        return F.conv2d(F.conv2d(x, kx, groups=C), ky, groups=C)

    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mx, my = blur(a), blur(b)
    sxx = blur(a * a) - mx * mx
    syy = blur(b * b) - my * my
    sxy = blur(a * b) - mx * my
    m = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return m.mean()


def reconstruction_loss(pred, target, perceptual=None):
    """Equal-weight sum of L1, (1 - SSIM) and, when supplied, a perceptual term.

    Returns ``(total, components)`` with float components for logging.
    """
    l1 = (pred - target).abs().mean()
    dssim = 1.0 - ssim_torch(pred, target)
    total = l1 + dssim
    parts = {"l1": float(l1.detach()), "dssim": float(dssim.detach())}
    if perceptual is not None:
        p = perceptual(pred, target)
        total = total + p
        parts["perceptual"] = float(p.detach())
    return total, parts
