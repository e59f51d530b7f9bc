"""Procedural transmission/reflection scenes and flash/no-flash image formation.

The no-flash capture is ``I = T + gamma * R`` and the flash capture is
``I_flash = (1 + theta) * T + gamma * R``; the flash only boosts the
transmitted layer, so ``I_flash - I = theta * T`` for an aligned pair.
"""

import string
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .datatypes import CapturePair, FlashSceneSpec, WarpParams, expand
from .errors import ConfigError, ContractError, ShapeError
from .kernels import SHAPE_CIRCLE, SHAPE_RECT, rasterize_shapes

TEXTURE_FAMILIES = ("gradients", "shapes", "glyphs")
TONEMAP_GAMMA = 2.2


@dataclass
class SceneConfig:
    size: int = 64
    channels: int = 3
    textures: tuple = TEXTURE_FAMILIES
    gamma_range: tuple = (0.2, 0.8)
    theta_range: tuple = (0.5, 2.0)
    gamma_map: bool = False
    theta_vignette: bool = False
    n_shapes: tuple = (3, 7)
    n_glyphs: tuple = (0, 2)
    depth_range: tuple = (1.0, 2.5)
    supersample: int = 4

    def validate(self):
        if int(self.size) <= 0:
            raise ConfigError(f"scene.size must be positive, got {self.size}")
        if self.channels not in (1, 3):
            raise ConfigError(f"scene.channels must be 1 or 3, got {self.channels}")
        if not self.textures:
            raise ConfigError("scene.textures must name at least one texture family")
        bad = [t for t in self.textures if t not in TEXTURE_FAMILIES]
        if bad:
            raise ConfigError(f"scene.textures: unknown families {bad}")
        g0, g1 = self.gamma_range
        if not (0 <= g0 <= g1 <= 1):
            raise ConfigError(f"scene.gamma_range must satisfy 0 <= lo <= hi <= 1, got {list(self.gamma_range)}")
        t0, t1 = self.theta_range
        if not (0 < t0 <= t1):
            raise ConfigError(f"scene.theta_range must satisfy 0 < lo <= hi, got {list(self.theta_range)}")
        d0, d1 = self.depth_range
        if not (0 < d0 <= d1):
            raise ConfigError(f"scene.depth_range must satisfy 0 < lo <= hi, got {list(self.depth_range)}")
        if self.supersample < 1:
            raise ConfigError("scene.supersample must be >= 1")
        return self


# --------------------------------------------------------------------------
# textures
# --------------------------------------------------------------------------

def _gradient(rng, H, W, C):
    yy, xx = np.mgrid[0:H, 0:W] / max(H, W)
    ang = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(ang) * xx + np.sin(ang) * yy
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-12)
    c0 = rng.uniform(0.05, 0.6, C)
    c1 = rng.uniform(0.05, 0.6, C)
    img = c0 + ramp[..., None] * (c1 - c0)
    # one low-frequency ripple
    fx, fy = rng.uniform(-2, 2, 2)
    ph = rng.uniform(0, 2 * np.pi)
    ripple = 0.1 * np.sin(2 * np.pi * (fx * xx + fy * yy) + ph)
    return np.clip(img + ripple[..., None], 0.0, 1.0)


def _random_shapes(rng, H, W, C, n, depth_lo, depth_hi):
    rows = np.zeros((n, 11))
    scale = min(H, W)
    for k in range(n):
        kind = rng.integers(0, 3)
        rows[k, 0] = kind
        cx, cy = rng.uniform(0, W), rng.uniform(0, H)
        if kind == SHAPE_CIRCLE:
            rows[k, 1:4] = cx, cy, rng.uniform(0.06, 0.22) * scale
        elif kind == SHAPE_RECT:
            rows[k, 1:6] = (cx, cy, rng.uniform(0.05, 0.25) * scale, rng.uniform(0.05, 0.25) * scale,
                            rng.uniform(0, np.pi))
        else:
            r = rng.uniform(0.1, 0.3) * scale
            a = rng.uniform(0, 2 * np.pi) + np.array([0.0, 2.1, 4.2]) + rng.uniform(-0.4, 0.4, 3)
            rows[k, 1:7] = np.stack([cx + r * np.cos(a), cy + r * np.sin(a)], axis=1).ravel()
        col = rng.uniform(0.05, 1.0, 3)
        rows[k, 7:7 + C] = col[:C]
        rows[k, 10] = rng.uniform(depth_lo, depth_hi)
    return rows


@lru_cache(maxsize=64)
def _font(size):
    return ImageFont.load_default(size=size)


def _draw_glyphs(rng, img, depth, n, depth_lo, depth_hi):
    H, W, C = img.shape
    for _ in range(n):
        size = int(rng.integers(max(8, H // 4), max(9, H // 2)))
        ch = string.ascii_uppercase[rng.integers(0, 26)]
        font = _font(size)
        canvas = Image.new("L", (W, H), 0)
        draw = ImageDraw.Draw(canvas)
        draw.text((float(rng.uniform(0, W - size * 0.6)), float(rng.uniform(-size * 0.2, H - size))),
                  ch, fill=255, font=font)
        alpha = np.asarray(canvas, dtype=np.float64) / 255.0
        col = rng.uniform(0.05, 1.0, 3)[:C]
        img = img * (1 - alpha[..., None]) + alpha[..., None] * col
        depth = np.where(alpha > 0.5, rng.uniform(depth_lo, depth_hi), depth)
    return img, depth


def make_texture(rng, H, W, C, cfg):
    """Return a (H, W, C) texture in [0, 1] and its per-pixel depth."""
    d0, d1 = cfg.depth_range
    far = d0 + 0.6 * (d1 - d0)
    yy, xx = np.mgrid[0:H, 0:W] / max(H - 1, W - 1, 1)
    tilt = rng.uniform(-1, 1, 2)
    plane = tilt[0] * xx + tilt[1] * yy
    plane = (plane - plane.min()) / max(plane.max() - plane.min(), 1e-12)
    depth = far + plane * (d1 - far)
    if "gradients" in cfg.textures:
        img = _gradient(rng, H, W, C)
    else:
        img = np.broadcast_to(rng.uniform(0.05, 0.6, C), (H, W, C)).copy()
    if "shapes" in cfg.textures:
        n = int(rng.integers(cfg.n_shapes[0], cfg.n_shapes[1] + 1))
        shapes = _random_shapes(rng, H, W, C, n, d0, far)
        img, depth = rasterize_shapes(img, depth, shapes, cfg.supersample)
    if "glyphs" in cfg.textures:
        n = int(rng.integers(cfg.n_glyphs[0], cfg.n_glyphs[1] + 1))
        if cfg.textures == ("glyphs",):
            n = max(n, 1)
        img, depth = _draw_glyphs(rng, img, depth, n, d0, far)
    return np.clip(img, 0.0, 1.0), depth


def generate_scene(seed, config=None):
    """Build a deterministic FlashSceneSpec from ``seed``.

    Transmission, reflection and scalar parameters draw from independent child
    streams of ``SeedSequence(seed)``.
    """
    if isinstance(config, dict):
        config = SceneConfig(**config)
    cfg = (config or SceneConfig()).validate()
    H = W = int(cfg.size)
    C = cfg.channels
    ss_t, ss_r, ss_p = np.random.SeedSequence(int(seed)).spawn(3)
    rng_t, rng_r, rng_p = (np.random.default_rng(s) for s in (ss_t, ss_r, ss_p))
    T, depth = make_texture(rng_t, H, W, C, cfg)
    R, _ = make_texture(rng_r, H, W, C, cfg)

    gamma = float(rng_p.uniform(*cfg.gamma_range))
    theta = float(rng_p.uniform(*cfg.theta_range))
    if cfg.gamma_map:
        g_other = float(rng_p.uniform(*cfg.gamma_range))
        yy, xx = np.mgrid[0:H, 0:W] / max(H - 1, 1)
        ang = rng_p.uniform(0, 2 * np.pi)
        ramp = np.clip(0.5 + 0.5 * (np.cos(ang) * (xx - 0.5) + np.sin(ang) * (yy - 0.5)) * 1.414, 0, 1)
        gamma = gamma + ramp * (g_other - gamma)
    if cfg.theta_vignette:
        yy, xx = np.mgrid[0:H, 0:W]
        r2 = ((xx - (W - 1) / 2) ** 2 + (yy - (H - 1) / 2) ** 2) / (((W - 1) / 2) ** 2 + ((H - 1) / 2) ** 2)
        k = float(rng_p.uniform(0.1, 0.5))
        theta = theta * (1.0 - k * r2)
    return FlashSceneSpec(T, R, depth, gamma, theta, seed=int(seed))


# --------------------------------------------------------------------------
# image formation
# --------------------------------------------------------------------------

def compose_no_flash(spec):
    """Composite capture without flash: ``T + gamma * R``."""
    T, R = spec.transmission, spec.reflection
    if T.shape != R.shape:
        raise ShapeError("transmission and reflection shapes differ")
    return T + expand(spec.gamma, R) * R


def compose_flash(spec):
    """Composite capture with flash: ``(1 + theta) * T + gamma * R``."""
    return compose_no_flash(spec) + expand(spec.theta, spec.transmission) * spec.transmission


def flash_boost(spec):
    """The transmitted signal isolated by an ideal flash difference, ``theta * T``."""
    return expand(spec.theta, spec.transmission) * spec.transmission


def render_pair(spec, tonemapped=False):
    """Aligned capture pair for ``spec``."""
    nf, fl = compose_no_flash(spec), compose_flash(spec)
    if tonemapped:
        nf, fl = tonemap(nf), tonemap(fl)
    return CapturePair(nf, fl, WarpParams.identity(), tonemapped=tonemapped, scene_ref=spec.seed)


def flash_difference(pair):
    """Reflection-free transmission estimate ``max(flash - no_flash, 0)``.

    Only meaningful for linear captures.
    """
    if pair.tonemapped:
        raise ContractError("flash_difference requires a linear (non-tonemapped) pair")
    return np.maximum(pair.flash - pair.no_flash, 0.0)


def add_noise(img, std, rng):
    """Additive Gaussian read noise, clipped at zero."""
    if std <= 0:
        return img
    return np.maximum(img + rng.normal(0.0, std, img.shape), 0.0)


def tonemap(img):
    img = np.asarray(img, dtype=np.float64)
    return np.clip(img, 0.0, 1.0) ** (1.0 / TONEMAP_GAMMA)


def untonemap(img):
    img = np.asarray(img, dtype=np.float64)
    return np.clip(img, 0.0, 1.0) ** TONEMAP_GAMMA
