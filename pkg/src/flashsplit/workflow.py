"""Config-driven orchestration shared by the CLI and the acceptance harness."""

import json
import logging
from pathlib import Path

import numpy as np
import torch

from .checkpoint import atomic_write_text
from .codec import roundtrip_psnr
from .dataset_io import MANIFEST, DatasetCorpus, read_dataset, split_seeds, write_dataset
from .errors import MissingCheckpointError, ModeMismatchError
from .pipeline import (load_codec, load_decoders, load_denoiser, load_pipeline, save_codec, save_decoders,
                       save_denoiser)
from .scene import generate_scene
from .trainer import (SceneCorpus, TrainConfig, codec_image_sampler, draw_samples, generate_stage2_dataset,
                      make_sample, train_codec_stage, train_stage1, train_stage2, write_log_csv)
from .warp import sample_misalignment

logger = logging.getLogger(__name__)


def mode_name(cfg):
    return "tonemapped" if cfg.trainer.tonemapped else "linear"


def checkpoint_paths(cfg):
    run = Path(cfg.paths.run_dir)
    return {"codec": run / "codec.ckpt", "stage1": run / "stage1.ckpt", "stage2": run / "stage2.ckpt",
            "single_stage1": run / "stage1_single_image.ckpt", "single_stage2": run / "stage2_single_image.ckpt"}


def corpus_seeds(cfg):
    s = cfg.scene
    return list(range(s.seed_base, s.seed_base + s.n_scenes))


def seed_splits(cfg):
    return split_seeds(corpus_seeds(cfg), cfg.scene.split, cfg.scene.seed_base)


def _dataset_root(cfg):
    root = Path(cfg.data_dir())
    return root if (root / MANIFEST).is_file() else None


def train_corpus(cfg):
    """Train split, read from the written dataset when present, else rendered on demand."""
    root = _dataset_root(cfg)
    if root is not None:
        return DatasetCorpus(root, "train", cfg.scene.scene_config())
    splits = seed_splits(cfg)
    return SceneCorpus([s for s in corpus_seeds(cfg) if splits[s] == "train"], cfg.scene.scene_config())


def capture_for_seed(cfg, scene_seed, spec=None):
    """The fixed evaluation capture of one scene (same rule as ``gen-data``)."""
    spec = spec if spec is not None else generate_scene(scene_seed, cfg.scene.scene_config())
    rng = np.random.default_rng([cfg.scene.seed_base, int(scene_seed), 7])
    w = sample_misalignment(rng, spec.shape, cfg.warp.max_shift, cfg.scene.depth_range[0], cfg.warp.kind,
                            cfg.warp.jitter)
    return make_sample(spec, w, tonemapped=cfg.trainer.tonemapped)


def eval_samples(cfg, split="test", n=None):
    """Held-out samples, from disk when a dataset exists."""
    from .trainer import Sample
    from .datatypes import expand
    from .scene import tonemap

    n = cfg.eval.n_samples if n is None else n
    root = _dataset_root(cfg)
    if root is not None:
        out = []
        for spec, pair in read_dataset(root, split)[:n]:
            t_gt = spec.transmission
            r_gt = expand(spec.gamma, spec.reflection) * spec.reflection
            if pair.tonemapped:
                t_gt, r_gt = tonemap(t_gt), tonemap(r_gt)
            out.append(Sample(spec, pair, t_gt, r_gt))
        return out
    splits = seed_splits(cfg)
    seeds = [s for s in corpus_seeds(cfg) if splits[s] == split][:n]
    return [capture_for_seed(cfg, s) for s in seeds]


def generate_dataset(cfg, out_dir):
    items = []
    for s in corpus_seeds(cfg):
        smp = capture_for_seed(cfg, s)
        items.append((smp.spec, smp.pair))
    return write_dataset(out_dir, items, cfg.scene.split, cfg.scene.seed_base,
                         meta={"config_hash": cfg.hash(), "tonemapped": cfg.trainer.tonemapped})


# --------------------------------------------------------------------------
# training stages
# --------------------------------------------------------------------------

def _meta(cfg, **extra):
    d = {"config_hash": cfg.hash()}
    d.update(extra)
    return d


def _write_log(cfg, name, log):
    write_log_csv(Path(cfg.paths.run_dir) / f"{name}_log.csv", log)


def run_codec(cfg, steps=None):
    torch.manual_seed(cfg.trainer.seed)
    corpus = train_corpus(cfg)
    codec_cfg = cfg.codec.codec_config(cfg.scene.channels, cfg.trainer.tonemapped)
    tc = cfg.codec.train_config(cfg.trainer.seed)
    if steps is not None:
        tc.steps = steps
    tcfg = TrainConfig(stage="codec", lr=tc.lr, steps=tc.steps, batch=tc.batch, crop=cfg.trainer.crop,
                       max_shift=cfg.warp.max_shift, tonemapped=cfg.trainer.tonemapped, seed=cfg.trainer.seed)
    holdout = [smp.pair.no_flash for smp in eval_samples(cfg, "val", 32)]
    holdout += [smp.target_t for smp in eval_samples(cfg, "val", 32)]
    codec, log = train_codec_stage(corpus, tcfg, codec_cfg, tc, np.stack(holdout).astype(np.float32))
    path = checkpoint_paths(cfg)["codec"]
    save_codec(path, codec, _meta(cfg, steps=tc.steps, holdout_psnr=log[-1].get("holdout_psnr")))
    _write_log(cfg, "codec", log)
    return codec, log


def _require(path, what):
    if not Path(path).is_file():
        raise MissingCheckpointError(f"missing {what} checkpoint: {path}")


def _check_mode(cfg, header, path):
    if header["mode"] != mode_name(cfg):
        raise ModeMismatchError(f"{path} was trained in {header['mode']} mode but the config asks for {mode_name(cfg)}")


def _stage1_config(cfg, single, steps=None):
    t = cfg.trainer
    return TrainConfig(stage="stage1", lr=t.lr_stage1, steps=t.stage1_steps if steps is None else steps,
                       batch=t.batch, crop=t.crop, max_shift=cfg.warp.max_shift, misalignment=cfg.warp.kind,
                       jitter=cfg.warp.jitter, tonemapped=t.tonemapped, single_image_ablation=single, seed=t.seed,
                       pool_size=t.pool_size, log_every=t.log_every, checkpoint_every=t.checkpoint_every,
                       lr_schedule=t.lr_schedule, noise=cfg.diffusion.noise_config())


def run_stage1(cfg, single=None, steps=None):
    single = cfg.trainer.single_image_ablation if single is None else single
    paths = checkpoint_paths(cfg)
    _require(paths["codec"], "codec")
    codec, h = load_codec(paths["codec"])
    _check_mode(cfg, h, paths["codec"])
    tcfg = _stage1_config(cfg, single, steps)
    key = "single_stage1" if single else "stage1"
    mode = mode_name(cfg)
    nan_path = Path(cfg.paths.run_dir) / f"{key}_last_good.ckpt"

    def on_nan(model):
        save_denoiser(nan_path, model, mode, _meta(cfg, note="last good weights before divergence"))
        return str(nan_path)

    model, log = train_stage1(tcfg, train_corpus(cfg), codec,
                              cfg.diffusion.denoiser_config(codec.cfg.latent_channels),
                              cfg.diffusion.build_schedule(), on_nan_save=on_nan)
    save_denoiser(paths[key], model, mode, _meta(cfg, steps=tcfg.steps, codec_sha256=_sha(paths["codec"])))
    _write_log(cfg, key, log)
    return model, log


def _sha(p):
    from .checkpoint import file_sha256

    return file_sha256(p)


def run_stage2(cfg, single=None, steps=None):
    single = cfg.trainer.single_image_ablation if single is None else single
    paths = checkpoint_paths(cfg)
    s1 = "single_stage1" if single else "stage1"
    _require(paths["codec"], "codec")
    _require(paths[s1], "stage-1")
    codec, h = load_codec(paths["codec"])
    _check_mode(cfg, h, paths["codec"])
    model, h1 = load_denoiser(paths[s1])
    _check_mode(cfg, h1, paths[s1])
    t = cfg.trainer
    rng = np.random.default_rng([t.seed, 2])
    samples = draw_samples(train_corpus(cfg), t.stage2_samples, rng, cfg.warp.max_shift, cfg.warp.kind,
                           cfg.warp.jitter, t.tonemapped, t.crop)
    data = generate_stage2_dataset(model, codec, samples, cfg.diffusion.stage2_ddim_steps, seed=t.seed)
    tcfg = TrainConfig(stage="stage2", lr=t.lr_stage2, steps=t.stage2_steps if steps is None else steps,
                       batch=t.batch, crop=t.crop, tonemapped=t.tonemapped, seed=t.seed, log_every=t.log_every,
                       lr_schedule=t.lr_schedule)
    decoders, logs = train_stage2(tcfg, data, codec)
    key = "single_stage2" if single else "stage2"
    save_decoders(paths[key], decoders, mode_name(cfg),
                  _meta(cfg, steps=tcfg.steps, ddim_steps=cfg.diffusion.stage2_ddim_steps,
                        stage1_sha256=_sha(paths[s1]), codec_sha256=_sha(paths["codec"])))
    for b, log in logs.items():
        _write_log(cfg, f"{key}_{b}", log)
    return decoders, logs


def load_trained(cfg, require=("codec",)):
    p = checkpoint_paths(cfg)
    pipe = load_pipeline(p["codec"], p["stage1"], p["stage2"], p["single_stage1"], p["single_stage2"],
                         require=require)
    if pipe.mode != mode_name(cfg):
        raise ModeMismatchError(f"checkpoints in {cfg.paths.run_dir} are {pipe.mode} but the config asks for "
                                f"{mode_name(cfg)}")
    return pipe
