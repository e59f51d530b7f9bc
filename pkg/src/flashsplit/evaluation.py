"""Comparison harness: run separation methods on a corpus, score them, write reports."""

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import atomic_write_bytes, atomic_write_text
from .datatypes import CapturePair, WarpParams, expand
from .errors import ConfigError, ContractError
from .metrics import psnr, ssim
from .scene import tonemap, untonemap
from .warp import baseline_prealign_difference, make_misaligned_pair, naive_difference, sample_misalignment

DIFFERENCE_METHODS = ("naive_diff", "prealign_diff")
LEARNED_METHODS = ("flash_split", "flash_split_single_image", "flash_split_vanilla_decode")
METHODS = DIFFERENCE_METHODS + LEARNED_METHODS


@dataclass(eq=False)
class MethodOutput:
    """Estimates for one sample.

    ``reference_t`` overrides the transmission ground truth for methods whose
    contract is a different quantity (difference methods estimate theta*T).
    """

    transmission: np.ndarray
    reflection: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    reference_t: Optional[np.ndarray] = None


@dataclass(eq=False)
class GroundTruth:
    sample_id: str
    transmission: np.ndarray
    reflection: np.ndarray
    mask: Optional[np.ndarray] = None


@dataclass
class MetricsReport:
    method: str
    rows: list
    space: str = "linear"
    dataset_hash: str = ""

    def aggregate(self):
        out = {}
        for target in sorted({r["target"] for r in self.rows}):
            sel = [r for r in self.rows if r["target"] == target]
            agg = {"n": len(sel),
                   "psnr_mean": float(np.mean([r["psnr"] for r in sel])),
                   "psnr_std": float(np.std([r["psnr"] for r in sel])),
                   "ssim_mean": float(np.mean([r["ssim"] for r in sel]))}
            if all(r.get("perceptual") is not None for r in sel):
                agg["perceptual_mean"] = float(np.mean([r["perceptual"] for r in sel]))
            out[target] = agg
        return out


def dataset_hash(samples):
    """Digest of the evaluation inputs (pair pixels and targets)."""
    h = hashlib.sha256()
    for s in samples:
        for a in (s.pair.no_flash, s.pair.flash, s.target_t, s.target_r):
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# methods
# --------------------------------------------------------------------------

def _linear_pair(pair):
    if not pair.tonemapped:
        return pair
    return CapturePair(untonemap(pair.no_flash), untonemap(pair.flash), pair.misalignment, False,
                       pair.scene_ref, pair.valid)


def _difference_method(samples, fn):
    """Flash-difference baselines estimate theta*T, so they are scored against
    theta*T (tonemapped for tonemapped corpora; the difference itself is taken
    on the linearized pair)."""
    out = []
    for s in samples:
        est, mask = fn(_linear_pair(s.pair))
        T = s.spec.transmission
        if T.shape != est.shape:
            raise ContractError(f"difference methods need uncropped samples: {T.shape} vs {est.shape}")
        ref = expand(s.spec.theta, T) * T
        if s.pair.tonemapped:
            est, ref = tonemap(est), tonemap(ref)
        out.append(MethodOutput(est, None, mask, ref))
    return out


def run_method(name, samples, pipeline=None, steps=50, seed=0):
    """Run one named method over ``samples``; sample ``i`` uses diffusion seed ``seed + i``."""
    if name == "naive_diff":
        return _difference_method(samples, naive_difference)
    if name == "prealign_diff":
        return _difference_method(samples, baseline_prealign_difference)
    if name not in LEARNED_METHODS:
        raise ConfigError(f"unknown method {name!r}; choose from {list(METHODS)}")
    if pipeline is None or not pipeline.has_method(name):
        raise ConfigError(f"method {name!r} needs trained checkpoints that were not supplied")
    seeds = [seed + i for i in range(len(samples))]
    t, r = pipeline.run(name, [s.pair for s in samples], steps=steps, seeds=seeds)
    return [MethodOutput(a, b, None) for a, b in zip(t, r)]


# --------------------------------------------------------------------------
# scoring
# --------------------------------------------------------------------------

def ground_truth(samples, ids=None):
    ids = ids or [str(i) for i in range(len(samples))]
    return [GroundTruth(i, s.target_t, s.target_r, s.pair.mask()) for i, s in zip(ids, samples)]


def evaluate_separation(outputs, gt, space="linear", perceptual=None, dataset_digest="", common_mask=True):
    """Score ``outputs`` ({method: [MethodOutput]}) against ``gt`` ([GroundTruth]).

    With ``common_mask`` every method is scored on the intersection of all
    validity masks for that sample, so methods see identical pixels.
    """
    n = len(gt)
    for m, outs in outputs.items():
        if len(outs) != n:
            raise ContractError(f"method {m} has {len(outs)} outputs for {n} samples")
    reports = {}
    masks = []
    for i, g in enumerate(gt):
        mk = np.ones(g.transmission.shape[:2], bool) if g.mask is None else g.mask.copy()
        if common_mask:
            for outs in outputs.values():
                if outs[i].mask is not None:
                    mk &= outs[i].mask
        masks.append(mk)
    for m, outs in outputs.items():
        rows = []
        for i, (g, o) in enumerate(zip(gt, outs)):
            mk = masks[i] if common_mask else (o.mask if o.mask is not None else g.mask)
            ref_t = g.transmission if o.reference_t is None else o.reference_t
            targets = [("T", o.transmission, ref_t)]
            if o.reflection is not None:
                targets.append(("R", o.reflection, g.reflection))
            for tname, est, ref in targets:
                if est.shape != ref.shape:
                    raise ContractError(f"{m} sample {g.sample_id}: shape {est.shape} vs {ref.shape}")
                rows.append({"sample_id": g.sample_id, "method": m, "target": tname,
                             "psnr": psnr(est, ref, mask=mk), "ssim": ssim(est, ref, mask=mk),
                             "perceptual": None if perceptual is None else float(perceptual(est, ref))})
        reports[m] = MetricsReport(m, rows, space, dataset_digest)
    return reports


# --------------------------------------------------------------------------
# artifacts
# --------------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def rows_to_csv(rows, fields):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r.get(k)) for k in fields])
    return buf.getvalue()


def _plot_png(path, fn):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5), dpi=100)
    fn(ax)
    fig.tight_layout()
    buf = io.BytesIO()
    # fixed metadata keeps the bytes reproducible
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def compare_methods(samples, methods, pipeline=None, out_dir=None, steps=50, seed=0, provenance=None,
                    perceptual=None):
    """Evaluate ``methods`` on ``samples``; write ``metrics.csv``, ``summary.json``
    and ``comparison.png`` when ``out_dir`` is given.  Returns ``(rows, summary)``."""
    if not samples:
        raise ConfigError("evaluation corpus is empty")
    methods = list(methods)
    outputs = {m: run_method(m, samples, pipeline, steps, seed) for m in methods}
    space = "tonemapped" if samples[0].pair.tonemapped else "linear"
    digest = dataset_hash(samples)
    reports = evaluate_separation(outputs, ground_truth(samples), space, perceptual, digest)
    rows = [r for m in methods for r in reports[m].rows]
    summary = {"space": space, "dataset_hash": digest, "n_samples": len(samples), "steps": steps, "seed": seed,
               "methods": {m: reports[m].aggregate() for m in methods}}
    if provenance:
        summary["provenance"] = provenance
    if out_dir is not None:
        out = Path(out_dir)
        atomic_write_text(out / "metrics.csv",
                          rows_to_csv(rows, ["sample_id", "method", "target", "psnr", "ssim", "perceptual"]))
        atomic_write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")

        def bars(ax):
            vals = [summary["methods"][m]["T"]["psnr_mean"] for m in methods]
            ax.bar(range(len(methods)), vals, color="#4c72b0")
            ax.set_xticks(range(len(methods)))
            ax.set_xticklabels(methods, rotation=20, ha="right", fontsize=8)
            ax.set_ylabel("transmission PSNR (dB)")

        _plot_png(out / "comparison.png", bars)
    return rows, summary


def sweep_warp(spec, magnitude, seed, kind="parallax"):
    """Misalignment of exactly ``magnitude`` px (largest displacement), random direction."""
    if magnitude == 0:
        return WarpParams.identity()
    rng = np.random.default_rng([seed, int(round(magnitude * 1000))])
    return sample_misalignment(rng, spec.shape, magnitude=magnitude, kind=kind, jitter=False,
                               depth_min=float(np.min(spec.depth_t)))


def misalignment_sweep(specs, magnitudes, methods=("naive_diff", "prealign_diff"), pipeline=None, out_dir=None,
                       steps=50, seed=0, tonemapped=False, provenance=None):
    """Mean/std transmission PSNR per (magnitude, method).

    Each spec gets a fixed random direction per magnitude; warps are pure
    depth parallax scaled so the nearest pixel moves ``magnitude`` px.
    """
    from .trainer import make_sample

    if not specs:
        raise ConfigError("misalignment sweep needs at least one scene")
    mags = [float(m) for m in magnitudes]
    if mags != sorted(mags):
        raise ConfigError("sweep magnitudes must be sorted ascending")
    rows = []
    for mag in mags:
        samples = [make_sample(sp, sweep_warp(sp, mag, seed + i), tonemapped=tonemapped) for i, sp in enumerate(specs)]
        outputs = {m: run_method(m, samples, pipeline, steps, seed) for m in methods}
        reports = evaluate_separation(outputs, ground_truth(samples))
        for m in methods:
            vals = [r["psnr"] for r in reports[m].rows if r["target"] == "T"]
            rows.append({"magnitude": mag, "method": m, "psnr_mean": float(np.mean(vals)),
                         "psnr_std": float(np.std(vals))})
    if out_dir is not None:
        out = Path(out_dir)
        atomic_write_text(out / "sweep.csv", rows_to_csv(rows, ["magnitude", "method", "psnr_mean", "psnr_std"]))
        meta = {"magnitudes": mags, "methods": list(methods), "n_scenes": len(specs), "seed": seed, "steps": steps}
        if provenance:
            meta["provenance"] = provenance
        atomic_write_text(out / "sweep.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")

        def lines(ax):
            for m in methods:
                sel = [r for r in rows if r["method"] == m]
                ax.errorbar([r["magnitude"] for r in sel], [r["psnr_mean"] for r in sel],
                            yerr=[r["psnr_std"] for r in sel], marker="o", capsize=3, label=m)
            ax.set_xlabel("misalignment (px)")
            ax.set_ylabel("transmission PSNR (dB)")
            ax.legend(fontsize=8)

        _plot_png(out / "sweep.png", lines)
    return rows
