"""Reflection separation from misaligned flash/no-flash pairs with latent diffusion."""

from .codec import Codec, CodecConfig, CrossDecoder, cross_latent_decode, decode, encode
from .config import PipelineConfig, load_config
from .datatypes import CapturePair, FlashSceneSpec, WarpParams
from .denoiser import DenoiserConfig, DualDenoiser
from .diffusion import (MultiResNoiseConfig, NoiseSchedule, build_schedule, ddim_step, forward_diffuse,
                        sample_multires_noise, separate)
from .errors import (ConfigError, ContractError, DatasetLoadError, DegenerateInputError, FlashSplitError,
                     MissingCheckpointError, ModeMismatchError, ShapeError, TrainingError, UsageError)
from .metrics import psnr, ssim
from .scene import (SceneConfig, compose_flash, compose_no_flash, flash_difference, generate_scene, tonemap,
                    untonemap)
from .warp import apply_warp, baseline_prealign_difference, estimate_translation, make_misaligned_pair

__version__ = "0.1.0"
