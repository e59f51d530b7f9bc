"""Shared torch building blocks."""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def group_norm(ch):
    g = math.gcd(8, ch)
    return nn.GroupNorm(g, ch, eps=1e-6)


class ResBlock(nn.Module):
    def __init__(self, cin, cout, temb_dim=None):
        super().__init__()
        self.norm1 = group_norm(cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb = nn.Linear(temb_dim, cout) if temb_dim else None
        self.norm2 = group_norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb=None):
        h = self.conv1(F.silu(self.norm1(x)))
        if self.temb is not None:
            h = h + self.temb(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class Downsample(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2.0, mode="nearest"))


def zero_module(m):
    for p in m.parameters():
        nn.init.zeros_(p)
    return m


class Attention(nn.Module):
    """Single-head attention over spatial positions.

    With ``context`` the keys and values come from another feature map of the
    same width (cross-attention); otherwise from ``x`` itself.
    """

    def __init__(self, ch, zero_query=False, zero_out=False, cross=False):
        super().__init__()
        self.norm = group_norm(ch)
        self.norm_ctx = group_norm(ch) if cross else None
        self.q = nn.Linear(ch, ch)
        self.k = nn.Linear(ch, ch)
        self.v = nn.Linear(ch, ch)
        self.out = nn.Linear(ch, ch)
        if zero_query:
            zero_module(self.q)
        if zero_out:
            zero_module(self.out)

    def forward(self, x, context=None):
        B, C, H, W = x.shape
        hx = self.norm(x).flatten(2).transpose(1, 2)
        if context is None:
            hc = hx
        else:
            norm = self.norm_ctx if self.norm_ctx is not None else self.norm
            hc = norm(context).flatten(2).transpose(1, 2)
        q, k, v = self.q(hx), self.k(hc), self.v(hc)
        w = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(C), dim=-1)
        h = self.out(w @ v)
        return h.transpose(1, 2).reshape(B, C, H, W)


def timestep_embedding(t, dim, max_period=10000.0):
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    t = torch.as_tensor(t)
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb
