"""Noise schedule, forward diffusion, annealed multi-resolution noise and the
deterministic DDIM sampler used for latent separation."""

from dataclasses import dataclass, field

import numpy as np
import torch

from .codec import to_numpy, to_tensor
from .errors import ConfigError, ContractError, UsageError


@dataclass(eq=False)
class NoiseSchedule:
    T_steps: int
    betas: np.ndarray
    alphas_bar: np.ndarray
    kind: str = "scaled-linear"

    def abar(self, t):
        """Cumulative product at integer step(s) ``t``; ``abar(0) == 1``."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T_steps):
            raise ContractError(f"timestep outside [0, {self.T_steps}]")
        table = np.concatenate([[1.0], self.alphas_bar])
        return table[t]


def build_schedule(T_steps=1000, beta_start=0.00085, beta_end=0.012, kind="scaled-linear"):
    """DDPM beta schedule; ``alphas_bar`` is accumulated in float64.

    ``scaled-linear`` interpolates ``sqrt(beta)`` linearly (the Stable
    Diffusion default).
    """
    if int(T_steps) < 1:
        raise ConfigError("T_steps must be >= 1")
    if not (0 < beta_start <= beta_end < 1):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T_steps, dtype=np.float64)
    elif kind == "scaled-linear":
        betas = np.linspace(beta_start ** 0.5, beta_end ** 0.5, T_steps, dtype=np.float64) ** 2
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(int(T_steps), betas, np.cumprod(1.0 - betas), kind)


def _coefs(sched, t, like):
    """sqrt(abar_t), sqrt(1 - abar_t) broadcastable against ``like``."""
    ab = sched.abar(t)
    a, b = np.sqrt(ab), np.sqrt(1.0 - ab)
    if isinstance(like, torch.Tensor):
        a = torch.as_tensor(a, dtype=like.dtype)
        b = torch.as_tensor(b, dtype=like.dtype)
        if a.ndim == 1:
            a, b = a[:, None, None, None], b[:, None, None, None]
    return a, b


def forward_diffuse(s0, eps, t, sched):
    """``s_t = sqrt(abar_t) * s0 + sqrt(1 - abar_t) * eps``.

    ``t`` is an integer in ``[1, T]`` or, for NCHW tensors, one per sample.
    """
    if s0.shape != eps.shape:
        raise ContractError(f"shape mismatch {tuple(s0.shape)} vs {tuple(eps.shape)}")
    tt = np.asarray(t.cpu() if isinstance(t, torch.Tensor) else t)
    if np.any(tt < 1) or np.any(tt > sched.T_steps):
        raise ContractError(f"t must lie in [1, {sched.T_steps}]")
    a, b = _coefs(sched, tt, s0)
    return a * s0 + b * eps


def ddim_step(s_t, eps_hat, t, t_prev, sched):
    """Deterministic (eta = 0) DDIM update from step ``t`` to ``t_prev``.

    ``s0_hat = (s_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)`` is re-noised to
    ``t_prev`` with the same ``eps``; ``abar_0 = 1``.
    """
    if not int(t) > int(t_prev) >= 0:
        raise ContractError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    a_t, b_t = _coefs(sched, int(t), s_t)
    a_p, b_p = _coefs(sched, int(t_prev), s_t)
    s0_hat = (s_t - b_t * eps_hat) / a_t
    return a_p * s0_hat + b_p * eps_hat


def ddim_timesteps(T_steps, steps):
    """Uniform stride from ``T`` downwards: ``T, T - k, ..., T - (steps-1) k``."""
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    stride = max(T_steps // steps, 1)
    ts = [T_steps - i * stride for i in range(steps)]
    return [t for t in ts if t >= 1]


# --------------------------------------------------------------------------
# annealed multi-resolution noise
# --------------------------------------------------------------------------

@dataclass
class MultiResNoiseConfig:
    scales: tuple = (1, 2, 4)
    anneal: float = 1.0
    strength: float = 1.0

    def weight(self, progress):
        """Per-octave weight multiplier, decaying linearly with training progress."""
        p = float(np.clip(progress, 0.0, 1.0))
        return self.strength * max(0.0, 1.0 - self.anneal * p)


def multires_weights(cfg, progress):
    w = cfg.weight(progress)
    out = []
    for s in cfg.scales:
        k = np.log2(s)
        if k != int(k) or s < 1:
            raise ConfigError(f"noise scale {s} is not a power of two")
        out.append(1.0 if k == 0 else w ** k)
    return np.array(out)


def sample_multires_noise(shape, cfg, progress, seed=None, rng=None):
    """Unit-variance noise summed from white noise at several resolutions.

    ``shape`` is (..., h, w, c).  Each scale ``s`` contributes nearest-upsampled
    white noise drawn at (h/s, w/s) with weight ``weight(progress)**log2(s)``;
    the sum is divided by the root of the summed squared weights.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    shape = tuple(int(s) for s in shape)
    h, w = shape[-3], shape[-2]
    weights = multires_weights(cfg, progress)
    out = np.zeros(shape, dtype=np.float64)
    for s, wt in zip(cfg.scales, weights):
        if h % s or w % s:
            raise ConfigError(f"noise scale {s} does not divide latent size {h}x{w}")
        if wt == 0.0:
            continue
        small = rng.standard_normal(shape[:-3] + (h // s, w // s, shape[-1]))
        out += wt * np.repeat(np.repeat(small, s, axis=-3), s, axis=-2)
    return out / np.sqrt(np.sum(weights ** 2))


# --------------------------------------------------------------------------
# separation
# --------------------------------------------------------------------------

def _initial_noise(shape_chw, seed):
    g = torch.Generator().manual_seed(int(seed))
    return torch.randn((2,) + tuple(shape_chw), generator=g, dtype=torch.float32)


@torch.no_grad()
def separate_latents(model, z_flash, z_noflash, sched, steps=50, seeds=(0,)):
    """Run DDIM on batched conditioning latents (NCHW); returns NCHW (lat_T, lat_R)."""
    B = z_flash.shape[0]
    if len(seeds) != B:
        raise ContractError(f"{len(seeds)} seeds for a batch of {B}")
    if model.single_image:
        z_flash = z_noflash
    init = torch.stack([_initial_noise(z_flash.shape[1:], s) for s in seeds], dim=1)
    s_t, s_r = init[0].to(z_flash.dtype), init[1].to(z_flash.dtype)
    ts = ddim_timesteps(sched.T_steps, steps)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        tt = torch.full((B,), t, dtype=torch.long)
        e_t, e_r = model(s_t, s_r, z_flash, z_noflash, tt)
        s_t = ddim_step(s_t, e_t, t, t_prev, sched)
        s_r = ddim_step(s_r, e_r, t, t_prev, sched)
    return s_t, s_r


@torch.no_grad()
def encode_pair(codec, pairs):
    """Encode flash and no-flash images of ``pairs`` (NCHW latents)."""
    dt = next(codec.parameters()).dtype
    fl = to_tensor(np.stack([p.flash for p in pairs]), dt)
    nf = to_tensor(np.stack([p.no_flash for p in pairs]), dt)
    return codec.encode_t(fl), codec.encode_t(nf)


def check_mode(codec, pairs):
    from .errors import ModeMismatchError

    want = codec.cfg.mode == "tonemapped"
    for p in pairs:
        if bool(p.tonemapped) != want:
            raise ModeMismatchError(
                f"pair is {'tonemapped' if p.tonemapped else 'linear'} but codec was trained in {codec.cfg.mode} mode")


def separate(model, codec, pair, steps=50, seed=0, sched=None):
    """Separate one capture pair into transmission and reflection latents.

    Returns two (h, w, c) float32 arrays; deterministic given ``seed``.
    """
    lat_t, lat_r = separate_many(model, codec, [pair], steps=steps, seeds=[seed], sched=sched)
    return lat_t[0], lat_r[0]


def separate_many(model, codec, pairs, steps=50, seeds=None, sched=None):
    """Batched :func:`separate`; returns (N, h, w, c) arrays."""
    if not getattr(model, "trained", False):
        raise UsageError("denoiser has not been trained")
    if not getattr(codec, "trained", False):
        raise UsageError("codec has not been trained")
    check_mode(codec, pairs)
    sched = sched or getattr(model, "schedule", None) or build_schedule()
    seeds = list(seeds) if seeds is not None else list(range(len(pairs)))
    z_f, z_n = encode_pair(codec, pairs)
    dt = next(model.parameters()).dtype
    lt, lr = separate_latents(model, z_f.to(dt), z_n.to(dt), sched, steps, seeds)
    return to_numpy(lt, squeeze=False), to_numpy(lr, squeeze=False)
