"""Command line entry point: ``sfsnid synth|train|pseudo|retrain|infer|eval|gradcheck|spectrum``.

Outputs depend only on the config file and ``--seed``; running a command
twice into two directories gives byte-identical files (float64 default).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import Config, dump_config, load_config
from .data import DatasetManifest, generate_dataset, load_image, save_image
from .fourier import dft2, log_amplitude_image, phase_image, to_amp_phase
from .gradcheck import gradcheck
from .pipeline import (Checkpoint, TrainingDiverged, evaluate, generate_pseudo_labels, infer, retrain_fused,
                       train_supervised)
from .tensor import Tensor

log = logging.getLogger("sfsnid")

IMAGE_SUFFIXES = {".png", ".ppm"}


def _config(args) -> Config:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(train=dataclasses.replace(cfg.train, seed=args.seed))
    return cfg


def _write_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_synth(args) -> int:
    cfg = _config(args)
    m = generate_dataset(cfg.data, cfg.train.seed, args.out)
    print(f"wrote {m.n_pairs} synthetic pairs and {m.n_real} real-like images to {args.out}/manifest.json")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.ini")
    resume = Checkpoint.load(args.resume) if args.resume else None
    ckpt = train_supervised(DatasetManifest.load(args.manifest), cfg, out, resume=resume)
    print(f"stage one finished at step {ckpt.step}; checkpoint {out / 'checkpoint.ckpt'}")
    return 0


def cmd_pseudo(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    m = generate_pseudo_labels(ckpt, DatasetManifest.load(args.manifest), args.out)
    print(f"wrote {len(m.pseudo_labels)} pseudo labels; manifest {Path(args.out) / 'manifest.json'}")
    return 0


def cmd_retrain(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    cfg = _config(args) if args.config else ckpt.cfg
    if args.seed is not None and not args.config:
        cfg = cfg.replace(train=dataclasses.replace(cfg.train, seed=args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.ini")
    result = retrain_fused(ckpt, DatasetManifest.load(args.manifest), cfg, out)
    print(f"retraining finished at step {result.step}; checkpoint {out / 'checkpoint.ckpt'}")
    return 0


def _input_files(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    return [path]


def cmd_infer(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    net = ckpt.build_network()
    src, out = Path(args.input), Path(args.out)
    files = _input_files(src)
    if not files:
        raise ValueError(f"no PNG/PPM images under {src}")
    single = not src.is_dir() and out.suffix.lower() == ".png"
    for f in files:
        dst = out if single else out / (f.stem + ".png")
        save_image(infer(net, load_image(f)), dst)
    print(f"dehazed {len(files)} image(s) into {out}")
    return 0


def cmd_eval(args) -> int:
    model = Checkpoint.load(args.checkpoint) if args.checkpoint else None
    report = evaluate(model, DatasetManifest.load(args.manifest), args.split)
    doc = report.to_dict()
    doc["checkpoint"] = Path(args.checkpoint).name if args.checkpoint else None
    _write_json(doc, Path(args.out))
    agg = report.aggregate
    print(" ".join(f"{k}={v:.6g}" for k, v in agg.items()))
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    report = gradcheck(cfg.network, seed=cfg.train.seed)
    text = report.format()
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    return 0 if report.passed else 1


def cmd_spectrum(args) -> int:
    """Debug dump: log-amplitude and phase images of each channel of an input."""
    img = load_image(args.input)
    ap = to_amp_phase(dft2(Tensor(img[None])))
    out = Path(args.out)
    amp, pha = ap.amplitude.data[0], ap.phase.data[0]
    for c in range(img.shape[0]):
        save_image(np.repeat(log_amplitude_image(amp[c])[None], 3, axis=0), out / f"amplitude_{c}.png")
        save_image(np.repeat(phase_image(pha[c])[None], 3, axis=0), out / f"phase_{c}.png")
    print(f"wrote {2 * img.shape[0]} spectrum images to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sfsnid", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--float32", action="store_true", help="compute in float32 (faster, not bit-reproducible)")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, config=True, seed=True):
        sp = sub.add_parser(name, help=help_text)
        if config:
            sp.add_argument("--config", help="INI config file (defaults to the toy settings)")
        if seed:
            sp.add_argument("--seed", type=int, help="overrides train.seed")
        sp.set_defaults(func=fn)
        return sp

    sp = add("synth", cmd_synth, "generate the synthetic dataset and manifest")
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "stage one: supervised training on synthetic pairs")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume", help="checkpoint to continue from")

    sp = add("pseudo", cmd_pseudo, "label the real hazy images with a trained checkpoint", config=False, seed=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)

    sp = add("retrain", cmd_retrain, "stage two: synthetic plus pseudo-labelled retraining")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True, help="manifest written by 'pseudo'")
    sp.add_argument("--out", required=True)

    sp = add("infer", cmd_infer, "dehaze an image or a directory of images", config=False, seed=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True, help="output PNG (single input) or directory")

    sp = add("eval", cmd_eval, "PSNR / SSIM / brightness report for a split", config=False, seed=False)
    sp.add_argument("--checkpoint", help="omit to score the hazy inputs themselves")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--split", choices=["synthetic", "real"], default="synthetic")
    sp.add_argument("--out", required=True, help="JSON report path")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of every differentiable op")
    sp.add_argument("--out", help="also write the report here")

    sp = add("spectrum", cmd_spectrum, "dump amplitude/phase images of an input", config=False, seed=False)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.float32:
        T.set_default_dtype(np.float32)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
