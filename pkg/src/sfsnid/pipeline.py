"""Two-stage training, pseudo-labelling, inference and evaluation.

Stage one trains on synthetic pairs with the supervised loss only. Stage two
continues from that checkpoint on synthetic pairs interleaved with
(real hazy, pseudo-label) pairs and adds the brightness loss.

Batch order is derived from ``(seed, epoch)`` alone, so a resumed run
replays exactly the batches an uninterrupted run would have seen.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_tensors, save_tensors
from .config import Config
from .data import DatasetManifest, load_image, save_image
from .network import SFSNiD, build_pyramid
from .objectives import psnr, ssim, total_loss
from .optim import Adam
from .tensor import Tensor

log = logging.getLogger(__name__)

STAGE_INIT = "init"
STAGE_SUPERVISED = "supervised"
STAGE_RETRAINED = "retrained"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray]
    opt_t: int
    step: int
    epoch: int
    batch_in_epoch: int
    stage: str
    config: dict
    config_hash: str
    initial_loss: float | None = None

    @property
    def cfg(self) -> Config:
        return Config.from_dict(self.config)

    def build_network(self) -> SFSNiD:
        cfg = self.cfg
        net = SFSNiD(cfg.network, seed=cfg.train.seed)
        net.load_state_dict(self.params)
        return net

    def save(self, path) -> Path:
        tensors = {f"param/{k}": v for k, v in self.params.items()}
        tensors.update({f"opt/{k}": v for k, v in self.optimizer.items()})
        meta = {
            "kind": "sfsnid-checkpoint",
            "stage": self.stage,
            "step": self.step,
            "epoch": self.epoch,
            "batch_in_epoch": self.batch_in_epoch,
            "opt_t": self.opt_t,
            "config": self.config,
            "config_hash": self.config_hash,
            "initial_loss": self.initial_loss,
        }
        save_tensors(path, tensors, meta)
        return Path(path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        tensors, meta = load_tensors(path)
        if meta.get("kind") != "sfsnid-checkpoint":
            raise ValueError(f"{path}: not a network checkpoint")
        params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
        opt = {k[len("opt/"):]: v for k, v in tensors.items() if k.startswith("opt/")}
        return cls(params, opt, meta["opt_t"], meta["step"], meta["epoch"], meta["batch_in_epoch"],
                   meta["stage"], meta["config"], meta["config_hash"], meta.get("initial_loss"))

    @classmethod
    def fresh(cls, cfg: Config) -> "Checkpoint":
        net = SFSNiD(cfg.network, seed=cfg.train.seed)
        return cls(net.state_dict(), {}, 0, 0, 0, 0, STAGE_INIT, cfg.to_dict(), cfg.digest())


# ---------------------------------------------------------------------------
# data helpers


def _load_stack(paths: list[Path]) -> np.ndarray:
    images = [load_image(p) for p in paths]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ValueError(f"training images must share one size, got {sorted(shapes)}")
    return np.stack(images)


def _crop(batch: np.ndarray, size: int, rng: np.random.Generator, *others: np.ndarray):
    """Random aligned crop to ``size`` when the images are larger; no-op otherwise."""
    h, w = batch.shape[-2:]
    if h <= size and w <= size:
        return (batch, *others)
    top = int(rng.integers(0, h - size + 1)) if h > size else 0
    left = int(rng.integers(0, w - size + 1)) if w > size else 0
    sl = (..., slice(top, top + min(size, h)), slice(left, left + min(size, w)))
    return (batch[sl], *(o[sl] for o in others))


@dataclass
class _Source:
    kind: str
    hazy: np.ndarray
    target: np.ndarray


def _epoch_schedule(sources: list[_Source], epoch: int, cfg: Config) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Batches for one epoch: synthetic batches, each followed by ``pseudo_ratio`` pseudo batches."""
    tc = cfg.train
    chunks = []
    for sid, src in enumerate(sources):
        order = np.random.default_rng([tc.seed, epoch, sid]).permutation(len(src.hazy))
        chunks.append([order[i : i + tc.batch_size] for i in range(0, len(order), tc.batch_size)])
    crop_rng = np.random.default_rng([tc.seed, epoch, 99])
    schedule = []
    synthetic = chunks[0]
    pseudo = chunks[1] if len(chunks) > 1 and chunks[1] else []
    for i, idx in enumerate(synthetic):
        items = [(sources[0], idx)]
        for r in range(tc.pseudo_ratio if pseudo else 0):
            items.append((sources[1], pseudo[(i * tc.pseudo_ratio + r) % len(pseudo)]))
        for src, ix in items:
            hazy, target = _crop(src.hazy[ix], tc.image_size, crop_rng, src.target[ix])
            schedule.append((src.kind, hazy, target))
    return schedule


# ---------------------------------------------------------------------------
# training


def train_step(net: SFSNiD, opt: Adam, hazy: np.ndarray, target: np.ndarray, loss_w) -> dict[str, float]:
    inputs = build_pyramid(Tensor(hazy))
    with T.no_grad():
        targets = build_pyramid(Tensor(target))
    opt.zero_grad()
    preds = net(inputs)
    loss, parts = total_loss(preds, targets.levels, inputs.levels, loss_w)
    loss.backward()
    opt.step()
    return parts


def _run(ckpt: Checkpoint, cfg: Config, sources: list[_Source], loss_w, stage: str,
         out_dir: Path | None) -> Checkpoint:
    net = SFSNiD(cfg.network, seed=cfg.train.seed)
    net.load_state_dict(ckpt.params)
    params = dict(net.named_parameters())
    tc = cfg.train
    opt = Adam(params, lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2, eps=tc.adam_eps)
    if ckpt.optimizer:
        opt.load_state(ckpt.optimizer, ckpt.opt_t)

    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "loss_log.jsonl", "a")

    step, epoch, pos = ckpt.step, ckpt.epoch, ckpt.batch_in_epoch
    initial = ckpt.initial_loss
    over = 0
    done = 0
    end_epoch = epoch + tc.epochs

    def snapshot() -> Checkpoint:
        return Checkpoint(net.state_dict(), {k: v.copy() for k, v in opt.state().items()}, opt.t, step,
                          epoch, pos, stage, cfg.to_dict(), cfg.digest(), initial)

    try:
        while epoch < end_epoch:
            schedule = _epoch_schedule(sources, epoch, cfg)
            while pos < len(schedule):
                if tc.steps and done >= tc.steps:
                    return snapshot()
                kind, hazy, target = schedule[pos]
                opt.lr = tc.lr_at(epoch)
                try:
                    parts = train_step(net, opt, hazy, target, loss_w)
                except FloatingPointError as exc:
                    raise TrainingDiverged(f"step {step} (epoch {epoch}, {kind} batch): {exc}") from exc
                if not math.isfinite(parts["total"]):
                    raise TrainingDiverged(f"step {step}: non-finite loss {parts['total']}")
                if initial is None:
                    initial = parts["total"]
                over = over + 1 if parts["total"] > tc.divergence_factor * initial else 0
                if over >= tc.divergence_patience:
                    raise TrainingDiverged(
                        f"step {step}: loss above {tc.divergence_factor}x the initial {initial:.6g} "
                        f"for {over} consecutive steps"
                    )
                if log_fh is not None:
                    rec = {"step": step, "epoch": epoch, "stage": stage, "batch": kind, "lr": opt.lr, **parts}
                    log_fh.write(json.dumps(rec) + "\n")
                step += 1
                done += 1
                pos += 1
                if out_dir is not None and tc.checkpoint_every and step % tc.checkpoint_every == 0:
                    snapshot().save(out_dir / f"checkpoint_{step:07d}.ckpt")
            epoch += 1
            pos = 0
        return snapshot()
    finally:
        if log_fh is not None:
            log_fh.close()


def _pair_source(manifest: DatasetManifest) -> _Source:
    if not manifest.synthetic_pairs:
        raise ValueError("manifest has no synthetic pairs to train on")
    hazy = _load_stack([manifest.resolve(h) for h, _ in manifest.synthetic_pairs])
    clear = _load_stack([manifest.resolve(c) for _, c in manifest.synthetic_pairs])
    return _Source("synthetic", hazy, clear)


def train_supervised(manifest: DatasetManifest, cfg: Config, out_dir=None,
                     resume: Checkpoint | None = None) -> Checkpoint:
    """Stage one: L_G + alpha * L_F on synthetic pairs (the brightness term is off)."""
    ckpt = resume or Checkpoint.fresh(cfg)
    loss_w = dataclasses.replace(cfg.loss, beta=0.0)
    out = None if out_dir is None else Path(out_dir)
    result = _run(ckpt, cfg, [_pair_source(manifest)], loss_w, STAGE_SUPERVISED, out)
    if out is not None:
        result.save(out / "checkpoint.ckpt")
    return result


def retrain_fused(ckpt: Checkpoint, manifest: DatasetManifest, cfg: Config, out_dir=None) -> Checkpoint:
    """Stage two: synthetic pairs plus pseudo-labelled real images, with the brightness loss."""
    if ckpt.stage not in (STAGE_SUPERVISED, STAGE_RETRAINED) or ckpt.step == 0:
        raise ValueError(f"retraining needs a trained checkpoint, got stage {ckpt.stage!r} at step {ckpt.step}")
    saved_net = ckpt.cfg.network
    if dataclasses.asdict(saved_net) != dataclasses.asdict(cfg.network):
        log.warning("network section differs from the checkpoint; using the checkpoint's")
        cfg = cfg.replace(network=saved_net)
    sources = [_pair_source(manifest)]
    if manifest.pseudo_labels:
        hazy = _load_stack([manifest.resolve(p) for p in manifest.real_hazy])
        labels = _load_stack([manifest.resolve(p) for p in manifest.pseudo_labels])
        sources.append(_Source("pseudo", hazy, labels))
    else:
        log.warning("manifest has no pseudo labels; retraining on synthetic pairs only")
    out = None if out_dir is None else Path(out_dir)
    result = _run(ckpt, cfg, sources, cfg.loss, STAGE_RETRAINED, out)
    if out is not None:
        result.save(out / "checkpoint.ckpt")
    return result


# ---------------------------------------------------------------------------
# inference and evaluation


def _as_network(model) -> SFSNiD:
    if isinstance(model, SFSNiD):
        return model
    if isinstance(model, (str, Path)):
        model = Checkpoint.load(model)
    return model.build_network()


def infer(model, image: np.ndarray) -> np.ndarray:
    """Dehaze one ``[3, H, W]`` image; returns the full-resolution prediction clamped to [0, 1]."""
    net = _as_network(model)
    image = np.asarray(image, dtype=T.get_default_dtype())
    h, w = image.shape[-2:]
    m = net.cfg.size_multiple
    ph, pw = (-h) % m, (-w) % m
    x = Tensor(image[None])
    if ph or pw:
        log.info("reflect-padding %dx%d input by (%d, %d) to a multiple of %d", h, w, ph, pw, m)
        x = T.pad_reflect(x, (0, ph, 0, pw))
    with T.no_grad():
        p0 = net(build_pyramid(x))[0].data[0, :, :h, :w]
    return np.clip(p0, 0.0, 1.0)


def generate_pseudo_labels(model, manifest: DatasetManifest, out_dir) -> DatasetManifest:
    """Run inference on every unlabeled real image and record the outputs as pseudo labels."""
    if not manifest.real_hazy:
        raise ValueError("manifest has no real hazy images to label")
    if isinstance(model, Checkpoint) and model.stage == STAGE_INIT:
        raise ValueError("pseudo labels need a trained checkpoint")
    net = _as_network(model)
    out = Path(out_dir)
    labels = []
    for i, rel in enumerate(manifest.real_hazy):
        src = manifest.resolve(rel)
        if not src.exists():
            raise FileNotFoundError(src)
        dst = out / "pseudo" / f"{i:04d}.png"
        save_image(infer(net, load_image(src)), dst)
        labels.append(str(dst.relative_to(out)))
    updated = manifest.rebased(out)
    updated = dataclasses.replace(updated, pseudo_labels=labels)
    updated.save(out / "manifest.json")
    return updated


@dataclass
class EvalReport:
    split: str
    records: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"split": self.split, "records": self.records, "aggregate": self.aggregate}


def evaluate_images(names, outputs, references, inputs=None, split: str = "custom") -> EvalReport:
    """One record per image (psnr, ssim, mean brightness) plus aggregate means."""
    records = []
    for i, (name, out) in enumerate(zip(names, outputs)):
        ref = None if references is None else references[i]
        rec = {
            "name": str(name),
            "psnr": None if ref is None else psnr(out, ref),
            "ssim": None if ref is None else ssim(out, ref),
            "mean_brightness": float(np.mean(out)),
        }
        if inputs is not None:
            rec["input_brightness"] = float(np.mean(inputs[i]))
        records.append(rec)
    agg = {}
    for key in ("psnr", "ssim", "mean_brightness", "input_brightness"):
        vals = [r[key] for r in records if r.get(key) is not None]
        if vals:
            agg[key] = float(np.mean(vals))
    agg["count"] = len(records)
    return EvalReport(split, records, agg)


def evaluate(model, manifest: DatasetManifest, split: str = "synthetic") -> EvalReport:
    """Score predictions on a split. ``model=None`` scores the hazy inputs themselves."""
    if split == "synthetic":
        names = [h for h, _ in manifest.synthetic_pairs]
        refs = [load_image(manifest.resolve(c)) for _, c in manifest.synthetic_pairs]
    elif split == "real":
        names = list(manifest.real_hazy)
        ref_paths = manifest.real_clear_reference
        refs = None if ref_paths is None else [load_image(manifest.resolve(p)) for p in ref_paths]
    else:
        raise ValueError(f"unknown split {split!r}; expected 'synthetic' or 'real'")
    inputs = [load_image(manifest.resolve(n)) for n in names]
    if model is None:
        outputs = inputs
    else:
        net = _as_network(model)
        outputs = [infer(net, x) for x in inputs]
    return evaluate_images(names, outputs, refs, inputs, split)
