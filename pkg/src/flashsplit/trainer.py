"""Codec, Stage-1 and Stage-2 training loops and Stage-2 data generation."""

import copy
import csv
import math
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn.functional as F

from .codec import Codec, CodecConfig, CodecTrainConfig, CrossDecoder, to_tensor, train_codec
from .denoiser import DenoiserConfig, DualDenoiser
from .diffusion import MultiResNoiseConfig, build_schedule, forward_diffuse, sample_multires_noise, separate
from .errors import ConfigError, TrainingError, UsageError
from .losses import reconstruction_loss
from .scene import SceneConfig, generate_scene, tonemap
from .warp import make_misaligned_pair, sample_misalignment

logger = logging.getLogger(__name__)

DEFAULT_LR = {"codec": 1e-3, "stage1": 3e-5, "stage2": 1e-5}


@dataclass
class TrainConfig:
    stage: str = "stage1"
    lr: Optional[float] = None
    steps: int = 20000
    batch: int = 8
    crop: int = 64
    max_shift: float = 6.0
    misalignment: str = "parallax"
    jitter: bool = True
    tonemapped: bool = False
    single_image_ablation: bool = False
    seed: int = 0
    pool_size: int = 4096
    log_every: int = 500
    checkpoint_every: int = 1000
    lr_schedule: str = "constant"
    noise: MultiResNoiseConfig = field(default_factory=MultiResNoiseConfig)

    def __post_init__(self):
        if isinstance(self.noise, dict):
            self.noise = MultiResNoiseConfig(**self.noise)
        if self.stage not in DEFAULT_LR:
            raise ConfigError(f"trainer.stage must be one of {sorted(DEFAULT_LR)}")
        if self.lr is None:
            self.lr = DEFAULT_LR[self.stage]
        if not self.lr > 0:
            raise ConfigError("trainer.lr must be positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"trainer.lr_schedule must be constant or cosine, got {self.lr_schedule!r}")
        if self.steps < 0 or self.batch < 1:
            raise ConfigError("trainer.steps must be >= 0 and trainer.batch >= 1")

    def check_crop(self, factor):
        if self.crop % factor:
            raise ConfigError(f"trainer.crop={self.crop} not divisible by codec factor {factor}")


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------

@dataclass(eq=False)
class Sample:
    """One training/evaluation example: ground truth plus a capture pair."""

    spec: object
    pair: object
    target_t: np.ndarray
    target_r: np.ndarray


@dataclass
class SceneCorpus:
    """Seeds plus the scene config that renders them."""

    seeds: list
    scene: SceneConfig = field(default_factory=SceneConfig)

    def __len__(self):
        return len(self.seeds)

    def spec(self, seed):
        return generate_scene(int(seed), self.scene)


def make_optimizer(params, cfg):
    """Adam at ``cfg.lr``, optionally cosine-decayed to zero over ``cfg.steps``."""
    opt = torch.optim.Adam(params, lr=cfg.lr)
    if cfg.lr_schedule == "cosine":
        n = max(cfg.steps, 1)
        sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: 0.5 * (1 + math.cos(math.pi * min(s / n, 1.0))))
    else:
        sched = None
    return opt, sched


def random_crop(arrays, crop, rng):
    H, W = arrays[0].shape[:2]
    if crop > min(H, W):
        raise ConfigError(f"crop {crop} larger than scene {H}x{W}")
    y = int(rng.integers(0, H - crop + 1))
    x = int(rng.integers(0, W - crop + 1))
    return [None if a is None else a[y:y + crop, x:x + crop] for a in arrays]


def make_sample(spec, warp, tonemapped=False, crop=None, rng=None):
    """Render a (possibly misaligned) pair and the separation targets.

    Targets are ``T`` and the reflected light ``gamma * R``; in tonemapped
    mode targets and inputs are tonemapped.
    """
    from .datatypes import CapturePair, expand

    pair = make_misaligned_pair(spec, warp, tonemapped=tonemapped)
    t_gt = spec.transmission
    r_gt = expand(spec.gamma, spec.reflection) * spec.reflection
    if tonemapped:
        t_gt, r_gt = tonemap(t_gt), tonemap(r_gt)
    if crop is not None and crop < t_gt.shape[0]:
        nf, fl, t_gt, r_gt, valid = random_crop([pair.no_flash, pair.flash, t_gt, r_gt, pair.valid], crop, rng)
        pair = CapturePair(nf, fl, pair.misalignment, pair.tonemapped, pair.scene_ref, valid)
    return Sample(spec, pair, t_gt, r_gt)


def draw_samples(corpus, n, rng, max_shift=6.0, kind="parallax", jitter=True, tonemapped=False, crop=None,
                 magnitude=None):
    """``n`` samples cycling through the corpus seeds, each with a fresh misalignment."""
    out = []
    for i in range(n):
        spec = corpus.spec(corpus.seeds[i % len(corpus.seeds)])
        w = sample_misalignment(rng, spec.shape, max_shift=max_shift, depth_min=corpus.scene.depth_range[0],
                                kind=kind, jitter=jitter, magnitude=magnitude)
        out.append(make_sample(spec, w, tonemapped=tonemapped, crop=crop, rng=rng))
    return out


def codec_image_sampler(corpus, max_shift=6.0, tonemapped=False, crop=None):
    """Sampler for codec training: a mix of T, gamma*R, no-flash and flash renders."""
    seeds = np.asarray(corpus.seeds)

    def sample(rng, n):
        imgs = []
        while len(imgs) < n:
            spec = corpus.spec(int(rng.choice(seeds)))
            w = sample_misalignment(rng, spec.shape, max_shift=max_shift, depth_min=corpus.scene.depth_range[0])
            s = make_sample(spec, w, tonemapped=tonemapped, crop=crop, rng=rng)
            imgs += [s.target_t, s.target_r, s.pair.no_flash, s.pair.flash]
        idx = rng.permutation(len(imgs))[:n]
        return np.stack([imgs[i] for i in idx]).astype(np.float32)

    return sample


def write_log_csv(path, log):
    keys = []
    for row in log:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for row in log:
            w.writerow({k: (f"{v:.8g}" if isinstance(v, float) else v) for k, v in row.items()})


# --------------------------------------------------------------------------
# codec
# --------------------------------------------------------------------------

def train_codec_stage(corpus, cfg, codec_cfg=None, codec_train=None, holdout=None):
    codec_cfg = codec_cfg or CodecConfig(mode="tonemapped" if cfg.tonemapped else "linear")
    cfg.check_crop(codec_cfg.factor)
    tc = codec_train or CodecTrainConfig(steps=cfg.steps, batch=cfg.batch, lr=cfg.lr, seed=cfg.seed)
    sampler = codec_image_sampler(corpus, cfg.max_shift, cfg.tonemapped, cfg.crop)
    return train_codec(sampler, codec_cfg, tc, holdout=holdout)


# --------------------------------------------------------------------------
# stage 1
# --------------------------------------------------------------------------

@torch.no_grad()
def encode_samples(codec, samples, single_image=False, chunk=64):
    """Encode conditioning and target latents: returns dict of NCHW tensors."""
    dt = next(codec.parameters()).dtype
    out = {"z_flash": [], "z_noflash": [], "s0_t": [], "s0_r": []}
    for i in range(0, len(samples), chunk):
        part = samples[i:i + chunk]
        enc = lambda imgs: codec.encode_t(to_tensor(np.stack(imgs), dt))
        out["z_noflash"].append(enc([s.pair.no_flash for s in part]))
        out["z_flash"].append(enc([s.pair.flash for s in part]))
        out["s0_t"].append(enc([s.target_t for s in part]))
        out["s0_r"].append(enc([s.target_r for s in part]))
    out = {k: torch.cat(v) for k, v in out.items()}
    if single_image:
        out["z_flash"] = out["z_noflash"].clone()
    return out


def stage1_loss(model, batch, t, noise_t, noise_r, sched):
    s_t = forward_diffuse(batch["s0_t"], noise_t, t, sched)
    s_r = forward_diffuse(batch["s0_r"], noise_r, t, sched)
    e_t, e_r = model(s_t, s_r, batch["z_flash"], batch["z_noflash"], torch.as_tensor(t))
    l_t = F.mse_loss(e_t, noise_t)
    l_r = F.mse_loss(e_r, noise_r)
    return l_t + l_r, l_t, l_r


def _noise_batch(rng, shape_nchw, noise_cfg, progress):
    n, c, h, w = shape_nchw
    x = sample_multires_noise((n, h, w, c), noise_cfg, progress, rng=rng)
    return torch.from_numpy(x.transpose(0, 3, 1, 2).astype(np.float32))


def train_stage1(cfg, corpus, codec, model_cfg=None, sched=None, samples=None, checkpoint_path=None,
                 on_nan_save=None):
    """Train the dual-branch denoiser with the noise-prediction L2 loss.

    A pool of ``cfg.pool_size`` misaligned samples is rendered and encoded once
    (the codec is frozen); each step draws a batch from the pool, a uniform
    timestep and annealed multi-resolution noise for both branches.
    Returns ``(model, log)``.
    """
    if not getattr(codec, "trained", False):
        raise UsageError("stage 1 needs a trained codec")
    cfg.check_crop(codec.factor)
    sched = sched or build_schedule()
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    if samples is None:
        samples = draw_samples(corpus, cfg.pool_size, rng, cfg.max_shift, cfg.misalignment, cfg.jitter,
                               cfg.tonemapped, cfg.crop)
    pool = encode_samples(codec, samples, cfg.single_image_ablation)
    N = pool["s0_t"].shape[0]
    model_cfg = model_cfg or DenoiserConfig(latent_channels=codec.cfg.latent_channels)
    model = DualDenoiser(model_cfg, sched)
    model.single_image = cfg.single_image_ablation
    model.schedule = sched
    opt, lr_sched = make_optimizer(model.parameters(), cfg)
    log = []
    last_good = copy.deepcopy(model.state_dict())
    for step in range(cfg.steps):
        idx = torch.from_numpy(rng.integers(0, N, cfg.batch))
        batch = {k: v[idx] for k, v in pool.items()}
        t = rng.integers(1, sched.T_steps + 1, cfg.batch)
        progress = step / max(cfg.steps, 1)
        shape = tuple(batch["s0_t"].shape)
        noise_t = _noise_batch(rng, shape, cfg.noise, progress)
        noise_r = _noise_batch(rng, shape, cfg.noise, progress)
        loss, l_t, l_r = stage1_loss(model, batch, t, noise_t, noise_r, sched)
        if not torch.isfinite(loss):
            path = None
            if on_nan_save is not None:
                model.load_state_dict(last_good)
                path = on_nan_save(model)
            raise TrainingError(f"stage-1 loss is not finite at step {step}", step=step, checkpoint=path)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if lr_sched is not None:
            lr_sched.step()
        log.append({"step": step, "loss": float(loss.detach()), "loss_t": float(l_t.detach()),
                    "loss_r": float(l_r.detach())})
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            last_good = copy.deepcopy(model.state_dict())
        if cfg.log_every and step % cfg.log_every == 0:
            recent = np.mean([r["loss"] for r in log[-cfg.log_every:]])
            logger.info("stage1 step %d loss %.4f", step, recent)
    model.eval()
    model.trained = True
    return model, log


# --------------------------------------------------------------------------
# stage 2
# --------------------------------------------------------------------------

@dataclass(eq=False)
class Stage2Tuple:
    branch: str
    latent: np.ndarray
    composite: np.ndarray
    target: np.ndarray
    scene_seed: int
    sample_seed: int
    ddim_steps: int


def generate_stage2_dataset(model, codec, samples, ddim_steps=20, seed=0):
    """Separate every sample with ``ddim_steps`` DDIM iterations.

    Transmission latents pair with the flash composite, reflection latents
    with the no-flash composite (a single-image model never sees the flash
    image, so both use no-flash).  Sample ``i`` uses seed ``seed + i``.
    """
    if not getattr(model, "trained", False):
        raise UsageError("stage-2 data generation needs a trained stage-1 model")
    out = []
    for i, s in enumerate(samples):
        sd = seed + i
        lat_t, lat_r = separate(model, codec, s.pair, steps=ddim_steps, seed=sd)
        ref = int(s.pair.scene_ref) if s.pair.scene_ref is not None else -1
        comp_t = s.pair.no_flash if model.single_image else s.pair.flash
        out.append(Stage2Tuple("T", lat_t, comp_t, s.target_t, ref, sd, ddim_steps))
        out.append(Stage2Tuple("R", lat_r, s.pair.no_flash, s.target_r, ref, sd, ddim_steps))
    return out


def _stack(tuples, dt):
    lat = torch.from_numpy(np.stack([t.latent for t in tuples]).transpose(0, 3, 1, 2).copy()).to(dt)
    comp = to_tensor(np.stack([t.composite for t in tuples]), dt)
    tgt = to_tensor(np.stack([t.target for t in tuples]), dt)
    return lat, comp, tgt


def stage2_loss(decoder, lat, comp, tgt, perceptual=None):
    return reconstruction_loss(decoder(lat, comp), tgt, perceptual)


def train_cross_decoder(cfg, tuples, codec, perceptual=None, seed_offset=0):
    if not tuples:
        raise ConfigError("stage-2 dataset is empty")
    torch.manual_seed(cfg.seed + seed_offset)
    rng = np.random.default_rng(cfg.seed + seed_offset)
    dec = CrossDecoder(codec)
    dt = next(dec.parameters()).dtype
    opt, lr_sched = make_optimizer(dec.parameters(), cfg)
    log = []
    for step in range(cfg.steps):
        idx = rng.integers(0, len(tuples), cfg.batch)
        lat, comp, tgt = _stack([tuples[i] for i in idx], dt)
        loss, parts = stage2_loss(dec, lat, comp, tgt, perceptual)
        if not torch.isfinite(loss):
            raise TrainingError(f"stage-2 loss is not finite at step {step}", step=step)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if lr_sched is not None:
            lr_sched.step()
        log.append({"step": step, "loss": float(loss.detach()), **parts})
        if cfg.log_every and step % cfg.log_every == 0:
            logger.info("stage2 step %d loss %.4f", step, log[-1]["loss"])
    dec.eval()
    dec.trained = True
    return dec, log


def train_stage2(cfg, stage2_dataset, codec, perceptual=None, branches=("T", "R")):
    """Train one cross-latent decoder per branch; returns ``(decoders, logs)`` dicts."""
    if not stage2_dataset:
        raise ConfigError("stage-2 dataset is empty")
    decoders, logs = {}, {}
    for k, b in enumerate(branches):
        tuples = [t for t in stage2_dataset if t.branch == b]
        decoders[b], logs[b] = train_cross_decoder(cfg, tuples, codec, perceptual, seed_offset=k)
    return decoders, logs
