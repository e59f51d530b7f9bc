"""Checkpoint persistence for the three trained stages and the inference bundle."""

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch

from .checkpoint import file_sha256, read_checkpoint, save_checkpoint
from .codec import Codec, CodecConfig, CrossDecoder, config_dict, to_numpy, to_tensor
from .denoiser import DenoiserConfig, DualDenoiser
from .diffusion import build_schedule, check_mode, separate_many
from .errors import ConfigError, MissingCheckpointError, ModeMismatchError

KIND_CODEC = "codec"
KIND_STAGE1 = "stage1"
KIND_STAGE2 = "stage2"


def _expect_kind(header, kind, path):
    if header.get("kind") != kind:
        raise ConfigError(f"{path} holds a {header.get('kind')!r} checkpoint, expected {kind!r}")


def save_codec(path, codec, meta=None):
    return save_checkpoint(path, KIND_CODEC, config_dict(codec.cfg), codec.state_dict(), codec.cfg.mode, meta)


def load_codec(path):
    header, state = read_checkpoint(path)
    _expect_kind(header, KIND_CODEC, path)
    cfg = dict(header["config"])
    cfg["widths"] = tuple(cfg["widths"])
    codec = Codec(CodecConfig(**cfg))
    codec.load_state_dict(state)
    codec.eval()
    codec.trained = True
    return codec, header


def _schedule_dict(sched):
    return {"T_steps": sched.T_steps, "kind": sched.kind, "beta_start": float(sched.betas[0]),
            "beta_end": float(sched.betas[-1])}


def save_denoiser(path, model, mode, meta=None):
    cfg = asdict(model.cfg)
    cfg["mult"] = list(cfg["mult"])
    sched = getattr(model, "schedule", None) or build_schedule()
    config = {"denoiser": cfg, "single_image": bool(model.single_image), "schedule": _schedule_dict(sched)}
    return save_checkpoint(path, KIND_STAGE1, config, model.state_dict(), mode, meta)


def load_denoiser(path):
    header, state = read_checkpoint(path)
    _expect_kind(header, KIND_STAGE1, path)
    cfg = dict(header["config"]["denoiser"])
    cfg["mult"] = tuple(cfg["mult"])
    s = header["config"]["schedule"]
    sched = build_schedule(s["T_steps"], s["beta_start"], s["beta_end"], s["kind"])
    model = DualDenoiser(DenoiserConfig(**cfg), sched)
    model.load_state_dict(state)
    model.eval()
    model.schedule = sched
    model.single_image = bool(header["config"]["single_image"])
    model.trained = True
    return model, header


def save_decoders(path, decoders, mode, meta=None):
    state = {}
    for b, dec in decoders.items():
        for k, v in dec.state_dict().items():
            state[f"{b}.{k}"] = v
    config = {"codec": config_dict(next(iter(decoders.values())).cfg), "branches": sorted(decoders)}
    return save_checkpoint(path, KIND_STAGE2, config, state, mode, meta)


def load_decoders(path, codec):
    header, state = read_checkpoint(path)
    _expect_kind(header, KIND_STAGE2, path)
    out = {}
    for b in header["config"]["branches"]:
        dec = CrossDecoder(codec)
        dec.load_state_dict({k[len(b) + 1:]: v for k, v in state.items() if k.startswith(b + ".")})
        dec.eval()
        dec.trained = True
        out[b] = dec
    return out, header


def _check_same_mode(headers):
    modes = {h["mode"] for h in headers if h is not None}
    if len(modes) > 1:
        raise ModeMismatchError(f"checkpoints mix value modes {sorted(modes)}")


def _pairs_digest(pairs):
    h = hashlib.sha256()
    for p in pairs:
        h.update(np.ascontiguousarray(p.no_flash).tobytes())
        h.update(np.ascontiguousarray(p.flash).tobytes())
    return h.hexdigest()


@dataclass(eq=False)
class Pipeline:
    """Trained codec, Stage-1 denoiser(s) and Stage-2 decoders.

    ``single_*`` hold the optional single-image ablation, whose Stage-2
    decoders use the no-flash image as composite for both branches.
    """

    codec: Codec
    model: Optional[DualDenoiser] = None
    decoders: Optional[dict] = None
    single_model: Optional[DualDenoiser] = None
    single_decoders: Optional[dict] = None
    hashes: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def mode(self):
        return self.codec.cfg.mode

    def has_method(self, name):
        if name == "flash_split":
            return self.model is not None and self.decoders is not None
        if name == "flash_split_vanilla_decode":
            return self.model is not None
        if name == "flash_split_single_image":
            return self.single_model is not None
        return False

    def latents(self, model, pairs, steps, seeds):
        key = (id(model), steps, tuple(seeds), _pairs_digest(pairs))
        if key not in self._cache:
            self._cache[key] = separate_many(model, self.codec, pairs, steps=steps, seeds=seeds)
        return self._cache[key]

    @torch.no_grad()
    def _decode(self, lats, composites, decoder):
        dt = next(self.codec.parameters()).dtype
        z = torch.from_numpy(np.ascontiguousarray(lats.transpose(0, 3, 1, 2))).to(dt)
        if decoder is None:
            out = self.codec.decode_t(z)
        else:
            out = decoder(z, to_tensor(np.stack(composites), dt))
        return list(to_numpy(out, squeeze=False).astype(np.float64))

    def run(self, name, pairs, steps=50, seeds=None):
        """Transmission and reflection image lists for a learned method."""
        check_mode(self.codec, pairs)
        seeds = list(seeds) if seeds is not None else list(range(len(pairs)))
        flash = [p.flash for p in pairs]
        noflash = [p.no_flash for p in pairs]
        if name == "flash_split":
            lt, lr = self.latents(self.model, pairs, steps, seeds)
            return self._decode(lt, flash, self.decoders["T"]), self._decode(lr, noflash, self.decoders["R"])
        if name == "flash_split_vanilla_decode":
            lt, lr = self.latents(self.model, pairs, steps, seeds)
            return self._decode(lt, None, None), self._decode(lr, None, None)
        if name == "flash_split_single_image":
            lt, lr = self.latents(self.single_model, pairs, steps, seeds)
            decs = self.single_decoders or {}
            return self._decode(lt, noflash, decs.get("T")), self._decode(lr, noflash, decs.get("R"))
        raise ConfigError(f"unknown learned method {name!r}")


def load_pipeline(codec_path, stage1_path=None, stage2_path=None, single_stage1_path=None,
                  single_stage2_path=None, require=()):
    """Load whichever checkpoints exist; names in ``require`` must be present."""
    paths = {"codec": codec_path, "stage1": stage1_path, "stage2": stage2_path,
             "single_stage1": single_stage1_path, "single_stage2": single_stage2_path}
    for name in require:
        p = paths.get(name)
        if p is None or not _exists(p):
            raise MissingCheckpointError(f"missing {name} checkpoint: {p}")
    codec, hc = load_codec(codec_path)
    headers = [hc]
    hashes = {"codec": file_sha256(codec_path)}
    pipe = Pipeline(codec, hashes=hashes)
    if stage1_path and _exists(stage1_path):
        pipe.model, h = load_denoiser(stage1_path)
        headers.append(h)
        hashes["stage1"] = file_sha256(stage1_path)
        if stage2_path and _exists(stage2_path):
            pipe.decoders, h = load_decoders(stage2_path, codec)
            headers.append(h)
            hashes["stage2"] = file_sha256(stage2_path)
    if single_stage1_path and _exists(single_stage1_path):
        pipe.single_model, h = load_denoiser(single_stage1_path)
        headers.append(h)
        hashes["single_stage1"] = file_sha256(single_stage1_path)
        if single_stage2_path and _exists(single_stage2_path):
            pipe.single_decoders, h = load_decoders(single_stage2_path, codec)
            headers.append(h)
            hashes["single_stage2"] = file_sha256(single_stage2_path)
    _check_same_mode(headers)
    return pipe


def _exists(p):
    from pathlib import Path

    return Path(p).is_file()
