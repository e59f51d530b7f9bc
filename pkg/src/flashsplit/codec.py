"""Deterministic convolutional autoencoder and the cross-latent decoder.

The codec defines the latent space that separation runs in.  The cross-latent
decoder is a copy of the codec with zero-initialized 1x1 skip projections from
an encoder that sees the unseparated composite image; the decoder itself is fed
the separated latent, never the encoder output.
"""

import copy
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import Downsample, ResBlock, Upsample, group_norm, zero_module
from .errors import ShapeError, TrainingError
from .losses import reconstruction_loss
from .metrics import psnr

logger = logging.getLogger(__name__)


@dataclass
class CodecConfig:
    channels: int = 3
    latent_channels: int = 4
    widths: tuple = (32, 64, 128)
    blocks: int = 1
    max_scale: float = 4.0
    mode: str = "linear"

    @property
    def factor(self):
        return 2 ** (len(self.widths) - 1)

    @property
    def out_max(self):
        return 1.0 if self.mode == "tonemapped" else self.max_scale


class Encoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        w = list(cfg.widths)
        self.conv_in = nn.Conv2d(cfg.channels, w[0], 3, padding=1)
        self.levels = nn.ModuleList()
        self.downs = nn.ModuleList()
        for i, ch in enumerate(w):
            self.levels.append(nn.ModuleList([ResBlock(ch, ch) for _ in range(cfg.blocks)]))
            if i < len(w) - 1:
                self.downs.append(Downsample(ch, w[i + 1]))
        self.norm_out = group_norm(w[-1])
        self.conv_out = nn.Conv2d(w[-1], cfg.latent_channels, 3, padding=1)

    def forward(self, x):
        """Return ``(raw_latent, skips)``; ``skips`` holds the feature map of
        every level above the bottleneck, finest first."""
        h = self.conv_in(x)
        skips = []
        for i, blocks in enumerate(self.levels):
            for b in blocks:
                h = b(h)
            if i < len(self.downs):
                skips.append(h)
                h = self.downs[i](h)
        return self.conv_out(F.silu(self.norm_out(h))), skips


class Decoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        w = list(cfg.widths)
        self.conv_in = nn.Conv2d(cfg.latent_channels, w[-1], 3, padding=1)
        self.mid = nn.ModuleList([ResBlock(w[-1], w[-1]) for _ in range(cfg.blocks)])
        self.ups = nn.ModuleList()
        self.levels = nn.ModuleList()
        for i in range(len(w) - 2, -1, -1):
            self.ups.append(Upsample(w[i + 1], w[i]))
            self.levels.append(nn.ModuleList([ResBlock(w[i], w[i]) for _ in range(cfg.blocks)]))
        self.norm_out = group_norm(w[0])
        self.conv_out = nn.Conv2d(w[0], cfg.channels, 3, padding=1)

    def forward(self, z, skips=None):
        """``skips`` (coarsest first) are added before each upsampled level."""
        h = self.conv_in(z)
        for b in self.mid:
            h = b(h)
        for i, (up, blocks) in enumerate(zip(self.ups, self.levels)):
            h = up(h)
            if skips is not None:
                h = h + skips[i]
            for b in blocks:
                h = b(h)
        return self.conv_out(F.silu(self.norm_out(h)))


class Codec(nn.Module):
    """Encoder/decoder pair plus per-channel latent standardization."""

    def __init__(self, cfg=None):
        super().__init__()
        self.cfg = cfg or CodecConfig()
        self.encoder = Encoder(self.cfg)
        self.decoder = Decoder(self.cfg)
        c = self.cfg.latent_channels
        self.register_buffer("lat_mean", torch.zeros(c))
        self.register_buffer("lat_std", torch.ones(c))
        self.trained = False

    @property
    def factor(self):
        return self.cfg.factor

    def check_image_shape(self, x):
        H, W = x.shape[-2:]
        f = self.factor
        if H % f or W % f:
            raise ShapeError(f"image {H}x{W} not divisible by codec factor {f}")
        if x.shape[1] != self.cfg.channels:
            raise ShapeError(f"expected {self.cfg.channels} image channels, got {x.shape[1]}")

    def encode_raw(self, x):
        self.check_image_shape(x)
        return self.encoder(x)[0]

    def standardize(self, raw):
        return (raw - self.lat_mean[None, :, None, None]) / self.lat_std[None, :, None, None]

    def unstandardize(self, z):
        return z * self.lat_std[None, :, None, None] + self.lat_mean[None, :, None, None]

    def encode_t(self, x):
        return self.standardize(self.encode_raw(x))

    def decode_t(self, z, clamp=True):
        if z.shape[1] != self.cfg.latent_channels:
            raise ShapeError(f"latent has {z.shape[1]} channels, codec expects {self.cfg.latent_channels}")
        out = self.decoder(self.unstandardize(z))
        return out.clamp(0.0, self.cfg.out_max) if clamp else out

    def forward(self, x):
        return self.decode_t(self.encode_t(x))


class CrossDecoder(nn.Module):
    """Cross-latent decoder built from a trained codec.

    Encoder features of the composite image reach the decoder only through
    zero-initialized 1x1 convolutions, one per resolution above the bottleneck.
    """

    def __init__(self, codec):
        super().__init__()
        self.cfg = copy.deepcopy(codec.cfg)
        self.encoder = copy.deepcopy(codec.encoder)
        self.decoder = copy.deepcopy(codec.decoder)
        self.register_buffer("lat_mean", codec.lat_mean.detach().clone())
        self.register_buffer("lat_std", codec.lat_std.detach().clone())
        w = list(self.cfg.widths)
        # coarsest first, matching Decoder.forward
        self.zero_convs = nn.ModuleList([zero_module(nn.Conv2d(w[i], w[i], 1)) for i in range(len(w) - 2, -1, -1)])
        self.trained = False

    @property
    def factor(self):
        return self.cfg.factor

    def forward(self, z, composite, clamp=True):
        if z.shape[1] != self.cfg.latent_channels:
            raise ShapeError(f"latent has {z.shape[1]} channels, decoder expects {self.cfg.latent_channels}")
        f = self.factor
        if composite.shape[-2:] != (z.shape[-2] * f, z.shape[-1] * f):
            raise ShapeError(f"composite {tuple(composite.shape[-2:])} incompatible with latent "
                             f"{tuple(z.shape[-2:])} at factor {f}")
        _, feats = self.encoder(composite)
        skips = [zc(fm) for zc, fm in zip(self.zero_convs, feats[::-1])]
        raw = z * self.lat_std[None, :, None, None] + self.lat_mean[None, :, None, None]
        out = self.decoder(raw, skips)
        return out.clamp(0.0, self.cfg.out_max) if clamp else out


# --------------------------------------------------------------------------
# numpy-facing API
# --------------------------------------------------------------------------

def to_tensor(img, dtype=torch.float32):
    """(H, W, C) or (N, H, W, C) array to an NCHW tensor."""
    a = np.asarray(img)
    if a.ndim == 3:
        a = a[None]
    return torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2))).to(dtype)


def to_numpy(t, squeeze=True):
    a = t.detach().cpu().numpy().transpose(0, 2, 3, 1)
    return a[0] if squeeze and a.shape[0] == 1 else a


def _dtype(module):
    return next(module.parameters()).dtype


@torch.no_grad()
def encode(img, codec):
    """Encode an (H, W, C) image to a standardized (H/f, W/f, c) latent."""
    return to_numpy(codec.encode_t(to_tensor(img, _dtype(codec))))


@torch.no_grad()
def decode(lat, codec):
    """Decode an (h, w, c) latent to an (f*h, f*w, C) image in the codec's value range."""
    lat = np.asarray(lat)
    if lat.shape[-1] != codec.cfg.latent_channels:
        raise ShapeError(f"latent has {lat.shape[-1]} channels, codec expects {codec.cfg.latent_channels}")
    return to_numpy(codec.decode_t(to_tensor(lat, _dtype(codec)))).astype(np.float64)


@torch.no_grad()
def cross_latent_decode(lat, composite, state):
    lat = np.asarray(lat)
    if lat.shape[-1] != state.cfg.latent_channels:
        raise ShapeError(f"latent has {lat.shape[-1]} channels, decoder expects {state.cfg.latent_channels}")
    dt = _dtype(state)
    return to_numpy(state(to_tensor(lat, dt), to_tensor(composite, dt))).astype(np.float64)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass
class CodecTrainConfig:
    steps: int = 3000
    batch: int = 8
    lr: float = 1e-3
    lr_final: float = 1e-4
    kl_weight: float = 1e-6
    seed: int = 0
    log_every: int = 100
    stats_images: int = 256
    eval_every: int = 0


def codec_loss(codec, batch):
    raw = codec.encode_raw(batch)
    out = codec.decoder(raw)
    total, parts = reconstruction_loss(out, batch)
    return total, parts, raw


def train_codec(sample_images, cfg=None, tcfg=None, holdout=None, stats_images=None):
    """Train a codec on images drawn from ``sample_images(rng, n) -> (n, H, W, C)``.

    Loss is L1 + (1 - SSIM) plus ``kl_weight * 0.5 * mean(latent**2)`` (the KL
    term of a unit-variance Gaussian posterior).  Latent standardization
    statistics are measured after training on ``stats_images`` (or a fresh
    draw).  Returns ``(codec, log)``.
    """
    cfg = cfg or CodecConfig()
    tcfg = tcfg or CodecTrainConfig()
    torch.manual_seed(tcfg.seed)
    rng = np.random.default_rng(tcfg.seed)
    codec = Codec(cfg)
    opt = torch.optim.Adam(codec.parameters(), lr=tcfg.lr)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda s: (tcfg.lr_final / tcfg.lr) ** min(s / max(tcfg.steps, 1), 1.0))
    log = []
    for step in range(tcfg.steps):
        batch = to_tensor(sample_images(rng, tcfg.batch))
        loss, parts, raw = codec_loss(codec, batch)
        if tcfg.kl_weight:
            loss = loss + tcfg.kl_weight * 0.5 * raw.pow(2).mean()
        if not torch.isfinite(loss):
            raise TrainingError(f"codec loss diverged at step {step}", step=step)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        sched.step()
        log.append({"step": step, "loss": float(loss.detach()), **parts})
        if tcfg.log_every and step % tcfg.log_every == 0:
            logger.info("codec step %d loss %.4f", step, log[-1]["loss"])
        if holdout is not None and tcfg.eval_every and step and step % tcfg.eval_every == 0:
            # interim estimate without refreshed latent statistics (they cancel in a round trip)
            codec.eval()
            log[-1]["holdout_psnr"] = roundtrip_psnr(codec, holdout)
            logger.info("codec step %d holdout PSNR %.2f", step, log[-1]["holdout_psnr"])
            codec.train()
    codec.eval()
    if stats_images is None:
        stats_images = sample_images(np.random.default_rng(tcfg.seed + 1), tcfg.stats_images)
    set_latent_stats(codec, stats_images)
    codec.trained = True
    if holdout is not None:
        log.append({"step": tcfg.steps, "holdout_psnr": roundtrip_psnr(codec, holdout)})
    return codec, log


@torch.no_grad()
def set_latent_stats(codec, images, chunk=64):
    raws = []
    for i in range(0, len(images), chunk):
        raws.append(codec.encode_raw(to_tensor(images[i:i + chunk], _dtype(codec))))
    raw = torch.cat(raws).to(torch.float64)
    mean = raw.mean(dim=(0, 2, 3))
    std = raw.std(dim=(0, 2, 3), unbiased=False)
    codec.lat_mean.copy_(mean.to(codec.lat_mean.dtype))
    codec.lat_std.copy_(std.clamp_min(1e-6).to(codec.lat_std.dtype))


@torch.no_grad()
def roundtrip_psnr(codec, images, chunk=64):
    vals = []
    for i in range(0, len(images), chunk):
        x = to_tensor(images[i:i + chunk], _dtype(codec))
        y = codec(x)
        for a, b in zip(to_numpy(y, squeeze=False), to_numpy(x, squeeze=False)):
            vals.append(psnr(a, b))
    return float(np.mean(vals))


def config_dict(cfg):
    d = asdict(cfg)
    d["widths"] = list(d["widths"])
    return d
