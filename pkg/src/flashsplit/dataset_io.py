"""On-disk corpus: 16-bit PNGs, one JSON sidecar per sample, a manifest with splits."""

import json
from pathlib import Path

import cv2
import numpy as np

from .checkpoint import atomic_write_bytes, atomic_write_text
from .datatypes import CapturePair, FlashSceneSpec, WarpParams
from .errors import DatasetLoadError

MANIFEST = "manifest.json"
_U16 = 65535.0
_IMAGES = ("transmission", "reflection", "no_flash", "flash")


def sample_id(seed):
    return f"s{int(seed):07d}"


def _encode_png(img, scale):
    q = np.clip(np.rint(np.asarray(img, np.float64) / scale * _U16), 0, _U16).astype(np.uint16)
    if q.shape[-1] == 3:
        q = q[..., ::-1]  # cv2 stores BGR
    elif q.ndim == 3:
        q = q[..., 0]
    ok, buf = cv2.imencode(".png", np.ascontiguousarray(q))
    if not ok:
        raise OSError("PNG encoding failed")
    return buf.tobytes()


def _decode_png(path, scale, channels):
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DatasetLoadError(f"cannot read image {path}")
    if raw.dtype != np.uint16:
        raise DatasetLoadError(f"{path}: expected 16-bit PNG, got {raw.dtype}")
    if raw.ndim == 2:
        raw = raw[..., None]
    elif raw.shape[-1] == 3:
        raw = raw[..., ::-1]
    if raw.shape[-1] != channels:
        raise DatasetLoadError(f"{path}: {raw.shape[-1]} channels, sidecar says {channels}")
    return raw.astype(np.float64) * (scale / _U16)


def _scalar_or_map(v, name, root, sid, files):
    a = np.asarray(v, dtype=np.float64)
    if a.ndim == 0:
        return float(a)
    fname = f"{sid}_{name}.png"
    hi = float(a.max()) or 1.0
    files[fname] = _encode_png(a[..., None], hi)
    return {"map": fname, "scale": hi, "min": float(a.min()), "max": hi, "mean": float(a.mean())}


def write_sample(root, spec, pair):
    """Write one scene and its capture pair; returns the sidecar dict."""
    root = Path(root)
    sid = sample_id(spec.seed)
    H, W, C = spec.shape
    lin = [spec.transmission, spec.reflection] + ([] if pair.tonemapped else [pair.no_flash, pair.flash])
    scale = max(float(max(a.max() for a in lin)), 1e-12)
    files = {}
    for name, img in zip(_IMAGES, (spec.transmission, spec.reflection, pair.no_flash, pair.flash)):
        s = 1.0 if (pair.tonemapped and name in ("no_flash", "flash")) else scale
        files[f"{sid}_{name}.png"] = _encode_png(img, s)
    dscale = float(spec.depth_t.max())
    files[f"{sid}_depth.png"] = _encode_png(spec.depth_t[..., None], dscale)
    if pair.valid is not None:
        files[f"{sid}_valid.png"] = _encode_png(pair.valid[..., None].astype(np.float64), 1.0)
    side = {
        "seed": int(spec.seed),
        "gamma": _scalar_or_map(spec.gamma, "gamma", root, sid, files),
        "theta": _scalar_or_map(spec.theta, "theta", root, sid, files),
        "warp": pair.misalignment.to_dict(),
        "tonemapped": bool(pair.tonemapped),
        "scale": scale,
        "depth_scale": dscale,
        "height": H, "width": W, "channels": C,
        "has_valid_mask": pair.valid is not None,
    }
    for fname, data in files.items():
        atomic_write_bytes(root / fname, data)
    atomic_write_text(root / f"{sid}.json", json.dumps(side, indent=2, sort_keys=True) + "\n")
    return side


def _load_param(v, root, shape):
    if isinstance(v, dict):
        m = _decode_png(root / v["map"], v["scale"], 1)[..., 0]
        if m.shape != shape:
            raise DatasetLoadError(f"{v['map']}: shape {m.shape} does not match sidecar {shape}")
        return m
    return float(v)


def read_sample(root, seed):
    """Read back ``(spec, pair)``; values are exact up to 16-bit quantization."""
    root = Path(root)
    sid = sample_id(seed)
    side_path = root / f"{sid}.json"
    if not side_path.is_file():
        raise DatasetLoadError(f"missing sidecar {side_path}")
    try:
        side = json.loads(side_path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetLoadError(f"{side_path}: invalid JSON ({e})") from e
    H, W, C = side["height"], side["width"], side["channels"]
    imgs = {}
    for name in _IMAGES:
        s = 1.0 if (side["tonemapped"] and name in ("no_flash", "flash")) else side["scale"]
        img = _decode_png(root / f"{sid}_{name}.png", s, C)
        if img.shape != (H, W, C):
            raise DatasetLoadError(f"{sid}_{name}.png: shape {img.shape} does not match sidecar {(H, W, C)}")
        imgs[name] = img
    depth = _decode_png(root / f"{sid}_depth.png", side["depth_scale"], 1)[..., 0]
    if depth.shape != (H, W):
        raise DatasetLoadError(f"{sid}_depth.png: shape {depth.shape} does not match sidecar {(H, W)}")
    spec = FlashSceneSpec(imgs["transmission"], imgs["reflection"], np.maximum(depth, 1e-6),
                          _load_param(side["gamma"], root, (H, W)), _load_param(side["theta"], root, (H, W)),
                          side["seed"])
    valid = None
    if side.get("has_valid_mask"):
        valid = _decode_png(root / f"{sid}_valid.png", 1.0, 1)[..., 0] > 0.5
    pair = CapturePair(imgs["no_flash"], imgs["flash"], WarpParams.from_dict(side["warp"]), side["tonemapped"],
                       side["seed"], valid)
    return spec, pair


def split_seeds(seeds, fractions=(0.8, 0.1, 0.1), seed=0):
    """Deterministic shuffled train/val/test assignment."""
    seeds = list(seeds)
    perm = np.random.default_rng(seed).permutation(len(seeds))
    n_train = int(round(fractions[0] * len(seeds)))
    n_val = int(round(fractions[1] * len(seeds)))
    names = {}
    for rank, i in enumerate(perm):
        names[seeds[i]] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    return names


def write_dataset(root, items, fractions=(0.8, 0.1, 0.1), split_seed=0, meta=None):
    """Write ``items`` [(spec, pair)] plus ``manifest.json``; returns the manifest."""
    root = Path(root)
    seeds = [int(spec.seed) for spec, _ in items]
    if len(set(seeds)) != len(seeds):
        raise DatasetLoadError("duplicate scene seeds in dataset")
    splits = split_seeds(seeds, fractions, split_seed)
    entries = []
    for spec, pair in items:
        write_sample(root, spec, pair)
        entries.append({"id": sample_id(spec.seed), "seed": int(spec.seed), "split": splits[int(spec.seed)]})
    manifest = {"n": len(entries), "samples": entries,
                "counts": {k: sum(e["split"] == k for e in entries) for k in ("train", "val", "test")}}
    manifest.update(meta or {})
    atomic_write_text(root / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(root):
    p = Path(root) / MANIFEST
    if not p.is_file():
        raise DatasetLoadError(f"no dataset manifest at {p}")
    return json.loads(p.read_text())


def read_dataset(root, split=None):
    """``[(spec, pair)]`` for every manifest entry, optionally one split."""
    man = read_manifest(root)
    return [read_sample(root, e["seed"]) for e in man["samples"] if split is None or e["split"] == split]


class DatasetCorpus:
    """Corpus view over a written dataset split; scenes are read lazily and cached."""

    def __init__(self, root, split="train", scene=None):
        from .scene import SceneConfig

        self.root = Path(root)
        man = read_manifest(root)
        self.seeds = [e["seed"] for e in man["samples"] if e["split"] == split]
        self.scene = scene or SceneConfig()
        self._cache = {}

    def __len__(self):
        return len(self.seeds)

    def spec(self, seed):
        if seed not in self._cache:
            self._cache[seed] = read_sample(self.root, seed)[0]
        return self._cache[seed]
