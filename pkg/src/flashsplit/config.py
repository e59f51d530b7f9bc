"""Pipeline configuration: nested sections, strict JSON parsing, stable hash."""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .codec import CodecConfig, CodecTrainConfig
from .denoiser import DenoiserConfig
from .diffusion import MultiResNoiseConfig, build_schedule
from .errors import ConfigError
from .scene import SceneConfig

DATA_DIR_ENV = "FLASHSPLIT_DATA_DIR"


@dataclass
class SceneSection:
    size: int = 64
    channels: int = 3
    textures: tuple = ("gradients", "shapes", "glyphs")
    gamma_range: tuple = (0.2, 0.8)
    theta_range: tuple = (0.5, 2.0)
    gamma_map: bool = False
    theta_vignette: bool = False
    n_shapes: tuple = (3, 7)
    n_glyphs: tuple = (0, 2)
    depth_range: tuple = (1.0, 2.5)
    supersample: int = 4
    n_scenes: int = 1000
    seed_base: int = 0
    split: tuple = (0.8, 0.1, 0.1)

    def scene_config(self):
        names = {f.name for f in dataclasses.fields(SceneConfig)}
        return SceneConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})


@dataclass
class WarpSection:
    max_shift: float = 6.0
    kind: str = "parallax"
    jitter: bool = True
    sweep_magnitudes: tuple = (0.0, 2.0, 4.0, 8.0)
    sweep_scenes: int = 50


@dataclass
class CodecSection:
    latent_channels: int = 4
    widths: tuple = (32, 64, 128)
    blocks: int = 1
    max_scale: float = 4.0
    steps: int = 3000
    batch: int = 8
    lr: float = 1e-3
    lr_final: float = 1e-4
    kl_weight: float = 1e-6
    stats_images: int = 256

    def codec_config(self, channels, tonemapped):
        return CodecConfig(channels=channels, latent_channels=self.latent_channels, widths=tuple(self.widths),
                           blocks=self.blocks, max_scale=self.max_scale,
                           mode="tonemapped" if tonemapped else "linear")

    def train_config(self, seed):
        return CodecTrainConfig(steps=self.steps, batch=self.batch, lr=self.lr, lr_final=self.lr_final,
                                kl_weight=self.kl_weight, seed=seed, stats_images=self.stats_images)


@dataclass
class DiffusionSection:
    T_steps: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012
    schedule: str = "scaled-linear"
    width: int = 32
    mult: tuple = (1, 2)
    noise_scales: tuple = (1, 2, 4)
    noise_anneal: float = 1.0
    noise_strength: float = 1.0
    inference_steps: int = 50
    stage2_ddim_steps: int = 20

    def build_schedule(self):
        return build_schedule(self.T_steps, self.beta_start, self.beta_end, self.schedule)

    def denoiser_config(self, latent_channels):
        return DenoiserConfig(latent_channels=latent_channels, width=self.width, mult=tuple(self.mult))

    def noise_config(self):
        return MultiResNoiseConfig(tuple(self.noise_scales), self.noise_anneal, self.noise_strength)


@dataclass
class TrainerSection:
    stage1_steps: int = 20000
    stage2_steps: int = 2000
    batch: int = 8
    crop: int = 64
    lr_stage1: float = 3e-5
    lr_stage2: float = 1e-5
    lr_schedule: str = "constant"
    pool_size: int = 4096
    stage2_samples: int = 512
    tonemapped: bool = False
    single_image_ablation: bool = False
    seed: int = 0
    log_every: int = 500
    checkpoint_every: int = 1000


@dataclass
class EvalSection:
    n_samples: int = 100
    methods: tuple = ("naive_diff", "prealign_diff", "flash_split", "flash_split_single_image",
                      "flash_split_vanilla_decode")
    steps: int = 50
    seed: int = 0


@dataclass
class PathsSection:
    data_dir: str = ""
    run_dir: str = "runs/default"
    out_dir: str = "out"


SECTIONS = {"scene": SceneSection, "warp": WarpSection, "codec": CodecSection, "diffusion": DiffusionSection,
            "trainer": TrainerSection, "eval": EvalSection, "paths": PathsSection}


def _coerce(section, name, default, value):
    where = f"{section}.{name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(float(v) if isinstance(v, int) and default and isinstance(default[0], float) else v
                     for v in value)
    return value


@dataclass
class PipelineConfig:
    scene: SceneSection = field(default_factory=SceneSection)
    warp: WarpSection = field(default_factory=WarpSection)
    codec: CodecSection = field(default_factory=CodecSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)

    @classmethod
    def from_dict(cls, data):
        """Strict parse: unknown sections or keys raise :class:`ConfigError`."""
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        cfg = cls()
        cfg.update(data)
        return cfg

    def update(self, data):
        for sec, values in data.items():
            if sec not in SECTIONS:
                raise ConfigError(f"unknown config section {sec!r}; allowed: {sorted(SECTIONS)}")
            if not isinstance(values, dict):
                raise ConfigError(f"config section {sec!r} must be an object")
            obj = getattr(self, sec)
            defaults = {f.name: getattr(SECTIONS[sec](), f.name) for f in dataclasses.fields(obj)}
            for k, v in values.items():
                if k not in defaults:
                    raise ConfigError(f"unknown config key {sec}.{k}")
                setattr(obj, k, _coerce(sec, k, defaults[k], v))
        self.validate()
        return self

    def set(self, dotted, value):
        sec, key = dotted.split(".", 1)
        return self.update({sec: {key: value}})

    def validate(self):
        self.scene.scene_config().validate()
        if self.scene.n_scenes < 1:
            raise ConfigError("scene.n_scenes must be >= 1")
        if len(self.scene.split) != 3 or any(s < 0 for s in self.scene.split) or abs(sum(self.scene.split) - 1) > 1e-9:
            raise ConfigError(f"scene.split must be three non-negative fractions summing to 1, got {list(self.scene.split)}")
        if self.warp.max_shift < 0:
            raise ConfigError("warp.max_shift must be >= 0")
        if self.warp.kind not in ("parallax", "translation", "homography"):
            raise ConfigError(f"warp.kind must be parallax, translation or homography, got {self.warp.kind!r}")
        mags = list(self.warp.sweep_magnitudes)
        if mags != sorted(mags):
            raise ConfigError("warp.sweep_magnitudes must be sorted ascending")
        if self.trainer.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"trainer.lr_schedule must be constant or cosine, got {self.trainer.lr_schedule!r}")
        if self.codec.lr <= 0 or self.trainer.lr_stage1 <= 0 or self.trainer.lr_stage2 <= 0:
            raise ConfigError("learning rates must be positive")
        f = 2 ** (len(self.codec.widths) - 1)
        if self.trainer.crop % f:
            raise ConfigError(f"trainer.crop={self.trainer.crop} not divisible by codec factor {f}")
        if self.trainer.crop > self.scene.size:
            raise ConfigError(f"trainer.crop={self.trainer.crop} exceeds scene.size={self.scene.size}")
        self.diffusion.build_schedule()
        return self

    def to_dict(self):
        def plain(v):
            if isinstance(v, tuple):
                return [plain(x) for x in v]
            return v

        return {sec: {k: plain(v) for k, v in dataclasses.asdict(getattr(self, sec)).items()} for sec in SECTIONS}

    def hash(self):
        """sha256 of canonical JSON; independent of key order in the source file.

        ``paths`` is excluded so relocating outputs does not change the hash.
        """
        d = self.to_dict()
        d.pop("paths")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def data_dir(self):
        return self.paths.data_dir or os.environ.get(DATA_DIR_ENV, "") or str(Path(self.paths.run_dir) / "data")


def load_config(path=None, overrides=None):
    """Defaults, then the JSON file at ``path``, then ``overrides`` (dotted keys)."""
    cfg = PipelineConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        cfg = PipelineConfig.from_dict(data)
    for k, v in (overrides or {}).items():
        cfg.set(k, v)
    return cfg
