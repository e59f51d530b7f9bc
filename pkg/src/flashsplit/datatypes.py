"""Value types passed between modules.

Images (``RadianceImage``) are plain float64 numpy arrays of shape (H, W, C);
latents (``LatentGrid``) are float32 arrays of shape (h, w, c).
"""

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ContractError, ShapeError

ArrayOrScalar = Union[float, np.ndarray]


def check_radiance(img, name="image"):
    """Validate a RadianceImage and return it as float64."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ShapeError(f"{name}: expected (H, W, C) with C in {{1, 3}}, got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeError(f"{name}: empty image")
    if not np.all(np.isfinite(img)):
        raise ContractError(f"{name}: non-finite values")
    if np.any(img < 0):
        raise ContractError(f"{name}: negative radiance")
    return img


def _as_map(v, hw, name):
    if np.ndim(v) == 0:
        return float(v)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != hw:
        raise ShapeError(f"{name}: map shape {v.shape} does not match image {hw}")
    return v


def expand(v, img):
    """Broadcast a scalar or (H, W) map against an (H, W, C) image."""
    if np.ndim(v) == 0:
        return float(v)
    return np.asarray(v)[..., None]


@dataclass(eq=False)
class WarpParams:
    """Spatial transform between the no-flash and flash viewpoints.

    ``homography`` maps source pixel coordinates (x, y, 1) to destination
    coordinates.  For ``parallax`` the content at pixel p moves by
    ``camera_shift / depth(p)`` and the homography (if not identity) is applied
    afterwards as jitter.
    """

    kind: str = "identity"
    translation: tuple = (0.0, 0.0)
    homography: np.ndarray = field(default_factory=lambda: np.eye(3))
    camera_shift: tuple = (0.0, 0.0)
    magnitude_label: Optional[float] = None

    KINDS = ("identity", "translation", "homography", "parallax")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ContractError(f"unknown warp kind {self.kind!r}")
        self.translation = (float(self.translation[0]), float(self.translation[1]))
        self.camera_shift = (float(self.camera_shift[0]), float(self.camera_shift[1]))
        H = np.array(self.homography, dtype=np.float64).reshape(3, 3)
        if H[2, 2] == 0:
            raise ContractError("homography h33 must be nonzero")
        H = H / H[2, 2]
        if abs(np.linalg.det(H)) <= 1e-9:
            raise ContractError("homography is not invertible")
        self.homography = H
        if self.kind == "identity":
            if self.translation != (0.0, 0.0) or self.camera_shift != (0.0, 0.0) or not np.array_equal(H, np.eye(3)):
                raise ContractError("identity warp must have neutral parameters")

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def shift(cls, dx, dy):
        return cls(kind="translation", translation=(dx, dy), magnitude_label=float(np.hypot(dx, dy)))

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": {
                "translation": list(self.translation),
                "homography": self.homography.tolist(),
                "camera_shift": list(self.camera_shift),
                "magnitude_label": self.magnitude_label,
            },
        }

    @classmethod
    def from_dict(cls, d):
        p = d.get("params", {})
        return cls(
            kind=d["kind"],
            translation=tuple(p.get("translation", (0.0, 0.0))),
            homography=np.array(p.get("homography", np.eye(3).tolist())),
            camera_shift=tuple(p.get("camera_shift", (0.0, 0.0))),
            magnitude_label=p.get("magnitude_label"),
        )


@dataclass(eq=False)
class FlashSceneSpec:
    """Ground-truth layers of one synthetic scene."""

    transmission: np.ndarray
    reflection: np.ndarray
    depth_t: np.ndarray
    gamma: ArrayOrScalar
    theta: ArrayOrScalar
    seed: int = 0

    def __post_init__(self):
        self.transmission = check_radiance(self.transmission, "transmission")
        self.reflection = check_radiance(self.reflection, "reflection")
        if self.transmission.shape != self.reflection.shape:
            raise ShapeError(
                f"transmission {self.transmission.shape} and reflection {self.reflection.shape} differ")
        hw = self.transmission.shape[:2]
        self.depth_t = np.asarray(self.depth_t, dtype=np.float64)
        if self.depth_t.shape != hw:
            raise ShapeError(f"depth map shape {self.depth_t.shape} does not match {hw}")
        if not np.all(self.depth_t > 0):
            raise ContractError("depth must be positive")
        self.gamma = _as_map(self.gamma, hw, "gamma")
        self.theta = _as_map(self.theta, hw, "theta")
        g = np.asarray(self.gamma)
        if np.any(g < 0) or np.any(g > 1) or not np.all(np.isfinite(g)):
            raise ContractError("gamma must lie in [0, 1]")
        th = np.asarray(self.theta)
        if not np.all(th > 0) or not np.all(np.isfinite(th)):
            raise ContractError("theta must be positive")

    @property
    def shape(self):
        return self.transmission.shape


@dataclass(eq=False)
class CapturePair:
    """A flash/no-flash capture, possibly misaligned.

    ``valid`` marks flash pixels whose source lay inside the frame; ``None``
    means every pixel is valid.
    """

    no_flash: np.ndarray
    flash: np.ndarray
    misalignment: WarpParams = field(default_factory=WarpParams)
    tonemapped: bool = False
    scene_ref: Optional[int] = None
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        self.no_flash = check_radiance(self.no_flash, "no_flash")
        self.flash = check_radiance(self.flash, "flash")
        if self.no_flash.shape != self.flash.shape:
            raise ShapeError(f"no_flash {self.no_flash.shape} and flash {self.flash.shape} differ")
        if self.tonemapped and (self.no_flash.max() > 1 or self.flash.max() > 1):
            raise ContractError("tonemapped pair must lie in [0, 1]")

    def mask(self):
        if self.valid is None:
            return np.ones(self.no_flash.shape[:2], dtype=bool)
        return self.valid
