"""``flashsplit`` command line: gen-data, train, infer, eval, sweep.

Settings resolve as flags > config file > defaults.  Exit codes: 0 success,
1 runtime failure, 2 invalid configuration or usage, 3 missing checkpoint,
4 linear/tonemapped mode mismatch.
"""

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_MISSING, EXIT_MODE = 0, 1, 2, 3, 4


def _common(p):
    p.add_argument("--config", type=Path, help="JSON configuration file")
    p.add_argument("--seed", type=int, help="override the command's seed")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--steps", type=int, help="training steps (train) or DDIM steps (infer/eval/sweep)")
    p.add_argument("--tonemapped", action="store_true", default=None, help="tonemapped-input variant")
    p.add_argument("--single-image-ablation", action="store_true", default=None,
                   help="replace the flash latent with the no-flash latent")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="flashsplit", description="Flash/no-flash reflection separation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("gen-data", help="render the synthetic corpus to disk")
    _common(p)
    p = sub.add_parser("train", help="train codec, stage1, stage2 or all")
    _common(p)
    p.add_argument("stage", choices=["codec", "stage1", "stage2", "all"])
    p = sub.add_parser("infer", help="separate capture pairs")
    _common(p)
    p.add_argument("inputs", nargs="*", type=Path, help="dataset sample sidecars (*.json)")
    p.add_argument("--pair", nargs=2, action="append", metavar=("NO_FLASH", "FLASH"), type=Path, default=[],
                   help="16-bit PNG pair with values scaled by --scale")
    p.add_argument("--scale", type=float, default=1.0, help="radiance represented by the PNG maximum")
    p = sub.add_parser("eval", help="compare methods on the held-out split")
    _common(p)
    p = sub.add_parser("sweep", help="PSNR versus misalignment magnitude")
    _common(p)
    return ap


def _overrides(args):
    o = {}
    if args.tonemapped:
        o["trainer.tonemapped"] = True
    if args.single_image_ablation:
        o["trainer.single_image_ablation"] = True
    if args.seed is not None:
        o[{"gen-data": "scene.seed_base", "train": "trainer.seed"}.get(args.command, "eval.seed")] = args.seed
    if args.steps is not None and args.command in ("infer", "eval", "sweep"):
        o["eval.steps"] = args.steps
    return o


def _sha_bytes(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()


def cmd_gen_data(cfg, args):
    from .workflow import generate_dataset

    out = args.out or Path(cfg.data_dir())
    man = generate_dataset(cfg, out)
    print(f"manifest: {Path(out) / 'manifest.json'}")
    print(f"samples: {man['n']} (train {man['counts']['train']}, val {man['counts']['val']}, "
          f"test {man['counts']['test']})")
    return EXIT_OK


def cmd_train(cfg, args):
    from . import workflow

    stages = ["codec", "stage1", "stage2"] if args.stage == "all" else [args.stage]
    for st in stages:
        if st == "codec":
            _, log = workflow.run_codec(cfg, args.steps)
            print(f"codec: {len(log) - 1} steps, holdout round-trip PSNR {log[-1].get('holdout_psnr', float('nan')):.2f} dB")
        elif st == "stage1":
            _, log = workflow.run_stage1(cfg, steps=args.steps)
            print(f"stage1: {len(log)} steps, final loss {log[-1]['loss'] if log else float('nan'):.4f}")
        else:
            _, logs = workflow.run_stage2(cfg, steps=args.steps)
            for b, log in logs.items():
                print(f"stage2 {b}: {len(log)} steps, final loss {log[-1]['loss'] if log else float('nan'):.4f}")
    print(f"checkpoints in {cfg.paths.run_dir}")
    return EXIT_OK


def _read_png_pair(nf_path, fl_path, scale, tonemapped):
    import cv2

    from .datatypes import CapturePair
    from .errors import DatasetLoadError

    imgs = []
    for p in (nf_path, fl_path):
        raw = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise DatasetLoadError(f"cannot read image {p}")
        peak = 65535.0 if raw.dtype == np.uint16 else 255.0
        a = raw.astype(np.float64) / peak
        a = a[..., None] if a.ndim == 2 else a[..., ::-1]
        imgs.append(a if tonemapped else a * scale)
    return CapturePair(imgs[0], imgs[1], tonemapped=tonemapped)


def cmd_infer(cfg, args):
    from .checkpoint import atomic_write_bytes, atomic_write_text
    from .dataset_io import _encode_png, read_sample
    from .errors import ConfigError
    from .workflow import load_trained, mode_name

    if not args.inputs and not args.pair:
        raise ConfigError("infer needs at least one input sidecar or --pair")
    pipe = load_trained(cfg, require=("codec", "stage1", "stage2"))
    jobs = []
    for p in args.inputs:
        seed = json.loads(Path(p).read_text())["seed"]
        _, pair = read_sample(Path(p).parent, seed)
        jobs.append((Path(p).stem, pair, [str(p)]))
    for nf, fl in args.pair:
        jobs.append((Path(fl).stem, _read_png_pair(nf, fl, args.scale, bool(cfg.trainer.tonemapped)), [str(nf), str(fl)]))
    out = Path(args.out or cfg.paths.out_dir)
    steps = cfg.eval.steps
    for i, (name, pair, sources) in enumerate(jobs):
        seed = cfg.eval.seed + i
        (t,), (r,) = pipe.run("flash_split", [pair], steps=steps, seeds=[seed])
        d = out / name
        scale = float(max(t.max(), r.max(), 1e-12)) if mode_name(cfg) == "linear" else 1.0
        atomic_write_bytes(d / "transmission.png", _encode_png(t, scale))
        atomic_write_bytes(d / "reflection.png", _encode_png(r, scale))
        prov = {"seed": seed, "steps": steps, "mode": mode_name(cfg), "png_scale": scale,
                "config_hash": cfg.hash(), "checkpoints": {k: pipe.hashes[k] for k in ("codec", "stage1", "stage2")},
                "inputs": sources, "input_sha256": _sha_bytes(pair.no_flash, pair.flash),
                "output_sha256": {"transmission": _sha_bytes(t), "reflection": _sha_bytes(r)}}
        atomic_write_text(d / "provenance.json", json.dumps(prov, indent=2, sort_keys=True) + "\n")
        print(f"{name}: wrote {d}")
    return EXIT_OK


def _learned_available(cfg, methods):
    from .evaluation import LEARNED_METHODS
    from .errors import MissingCheckpointError
    from .workflow import checkpoint_paths, load_trained

    learned = [m for m in methods if m in LEARNED_METHODS]
    if not learned:
        return None, methods
    if not checkpoint_paths(cfg)["codec"].is_file():
        print(f"no checkpoints in {cfg.paths.run_dir}; omitting {', '.join(learned)}", file=sys.stderr)
        return None, [m for m in methods if m not in LEARNED_METHODS]
    pipe = load_trained(cfg)
    keep = [m for m in methods if m not in LEARNED_METHODS or pipe.has_method(m)]
    dropped = [m for m in methods if m not in keep]
    if dropped:
        print(f"missing checkpoints; omitting {', '.join(dropped)}", file=sys.stderr)
    return pipe, keep


def _provenance(cfg, pipe):
    return {"config_hash": cfg.hash(), "checkpoints": dict(pipe.hashes) if pipe else {}}


def cmd_eval(cfg, args):
    from .evaluation import compare_methods
    from .workflow import eval_samples

    pipe, methods = _learned_available(cfg, list(cfg.eval.methods))
    samples = eval_samples(cfg, "test")
    out = Path(args.out or cfg.paths.out_dir)
    rows, summary = compare_methods(samples, methods, pipe, out, cfg.eval.steps, cfg.eval.seed,
                                    _provenance(cfg, pipe))
    for m in methods:
        a = summary["methods"][m]["T"]
        print(f"{m:28s} T  PSNR {a['psnr_mean']:6.2f} dB  SSIM {a['ssim_mean']:.4f}")
    print(f"wrote {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_sweep(cfg, args):
    from .evaluation import misalignment_sweep
    from .workflow import eval_samples

    wanted = ["naive_diff", "prealign_diff", "flash_split"]
    pipe, methods = _learned_available(cfg, wanted)
    specs = [s.spec for s in eval_samples(cfg, "test", cfg.warp.sweep_scenes)]
    out = Path(args.out or cfg.paths.out_dir)
    rows = misalignment_sweep(specs, cfg.warp.sweep_magnitudes, methods, pipe, out, cfg.eval.steps, cfg.eval.seed,
                              cfg.trainer.tonemapped, _provenance(cfg, pipe))
    for r in rows:
        print(f"{r['magnitude']:5.1f} px  {r['method']:16s} {r['psnr_mean']:6.2f} +- {r['psnr_std']:.2f} dB")
    print(f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None):
    from .config import load_config
    from .errors import ConfigError, FlashSplitError, MissingCheckpointError, ModeMismatchError, UsageError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingCheckpointError as e:
        print(f"missing checkpoint: {e}", file=sys.stderr)
        return EXIT_MISSING
    except ModeMismatchError as e:
        print(f"mode mismatch: {e}", file=sys.stderr)
        return EXIT_MODE
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FlashSplitError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
