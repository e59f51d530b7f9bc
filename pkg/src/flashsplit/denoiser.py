"""Dual-branch latent denoiser with inter-branch cross-attention.

Each branch is a small UNet over ``[noisy latent, flash latent, no-flash
latent]``.  At the mid stage both branches run self-attention and then attend
to each other's mid features.  The cross-attention query and output
projections start at zero, so a fresh model behaves exactly like two
independent branches.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import Attention, Downsample, ResBlock, Upsample, group_norm, timestep_embedding, zero_module
from .errors import ShapeError


@dataclass
class DenoiserConfig:
    latent_channels: int = 4
    width: int = 32
    mult: tuple = (1, 2)
    zero_out: bool = True
    output_skip: bool = True

    @property
    def temb_dim(self):
        return 4 * self.width


class Branch(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        c, w = cfg.latent_channels, cfg.width
        chs = [w * m for m in cfg.mult]
        temb = cfg.temb_dim
        self.conv_in = nn.Conv2d(3 * c, w, 3, padding=1)
        self.down_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = w
        for ch in chs:
            self.down_blocks.append(ResBlock(prev, ch, temb))
            self.downs.append(Downsample(ch, ch))
            prev = ch
        mid = chs[-1]
        self.mid1 = ResBlock(mid, mid, temb)
        self.self_attn = Attention(mid)
        self.mid2 = ResBlock(mid, mid, temb)
        self.ups = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        for ch in reversed(chs):
            self.ups.append(Upsample(prev, prev))
            self.up_blocks.append(ResBlock(prev + ch, ch, temb))
            prev = ch
        self.norm_out = group_norm(prev)
        self.conv_out = nn.Conv2d(prev, c, 3, padding=1)
        if cfg.zero_out:
            zero_module(self.conv_out)

    def encode(self, x, temb):
        h = self.conv_in(x)
        skips = []
        for block, down in zip(self.down_blocks, self.downs):
            h = block(h, temb)
            skips.append(h)
            h = down(h)
        h = self.mid1(h, temb)
        return h + self.self_attn(h), skips

    def decode(self, h, skips, temb):
        h = self.mid2(h, temb)
        for up, block, s in zip(self.ups, self.up_blocks, reversed(skips)):
            h = block(torch.cat([up(h), s], dim=1), temb)
        return self.conv_out(F.silu(self.norm_out(h)))


class DualDenoiser(nn.Module):
    """Transmission and reflection branches sharing one timestep embedding.

    With ``output_skip`` the networks' raw output F is read as a velocity and
    the returned noise estimate is ``sqrt(abar_t) F + sqrt(1 - abar_t) s_t``.
    The model still predicts epsilon and trains on the same loss; the skip only
    spares a small network from having to copy ``s_t`` through itself at high
    noise levels.
    """

    def __init__(self, cfg=None, schedule=None):
        super().__init__()
        self.cfg = cfg or DenoiserConfig()
        if self.cfg.output_skip:
            from .diffusion import build_schedule

            sched = schedule or build_schedule()
            ab = torch.as_tensor(sched.abar(np.arange(sched.T_steps + 1)), dtype=torch.float64)
            self.register_buffer("sqrt_abar", ab.sqrt().float())
        w = self.cfg.width
        self.time_mlp = nn.Sequential(nn.Linear(w, self.cfg.temb_dim), nn.SiLU(),
                                      nn.Linear(self.cfg.temb_dim, self.cfg.temb_dim))
        self.branch_t = Branch(self.cfg)
        self.branch_r = Branch(self.cfg)
        mid = w * self.cfg.mult[-1]
        self.cross_t = Attention(mid, zero_query=True, zero_out=True, cross=True)
        self.cross_r = Attention(mid, zero_query=True, zero_out=True, cross=True)
        self.trained = False
        self.single_image = False

    def forward(self, noisy_t, noisy_r, z_flash, z_noflash, t, cross_attention=True):
        """Predict the noise in both branch latents (all NCHW tensors)."""
        c = self.cfg.latent_channels
        shapes = {tuple(x.shape) for x in (noisy_t, noisy_r, z_flash, z_noflash)}
        if len(shapes) != 1:
            raise ShapeError(f"latent shapes differ: {sorted(shapes)}")
        if noisy_t.shape[1] != c:
            raise ShapeError(f"expected {c} latent channels, got {noisy_t.shape[1]}")
        f = 2 ** len(self.cfg.mult)
        if noisy_t.shape[-1] % f or noisy_t.shape[-2] % f:
            raise ShapeError(f"latent size {tuple(noisy_t.shape[-2:])} not divisible by {f}")
        B = noisy_t.shape[0]
        t = torch.as_tensor(t).reshape(-1)
        if t.numel() == 1:
            t = t.expand(B)
        dt = noisy_t.dtype
        temb = self.time_mlp(timestep_embedding(t, self.cfg.width).to(dt))
        cond = torch.cat([z_flash, z_noflash], dim=1)
        h_t, skips_t = self.branch_t.encode(torch.cat([noisy_t, cond], dim=1), temb)
        h_r, skips_r = self.branch_r.encode(torch.cat([noisy_r, cond], dim=1), temb)
        if cross_attention:
            h_t, h_r = h_t + self.cross_t(h_t, h_r), h_r + self.cross_r(h_r, h_t)
        eps_t = self.branch_t.decode(h_t, skips_t, temb)
        eps_r = self.branch_r.decode(h_r, skips_r, temb)
        if self.cfg.output_skip:
            a = self.sqrt_abar.to(dt)[t.long()].reshape(-1, 1, 1, 1)
            b = (1 - a * a).clamp_min(0).sqrt()
            eps_t = a * eps_t + b * noisy_t
            eps_r = a * eps_r + b * noisy_r
        return eps_t, eps_r
