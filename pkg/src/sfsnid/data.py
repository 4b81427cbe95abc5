"""Synthetic nighttime haze, image I/O and dataset manifests.

Images are float arrays of shape ``[3, H, W]`` with values in [0, 1].

Hazy synthesis follows the scattering model with an additive glow term::

    I = J * t + A * (1 - t) + sum_lights(intensity * color * G_sigma(. - pos)) + noise

The point-spread kernel G is an isotropic Gaussian normalised to a peak of
one, so ``intensity`` is the glow's peak value at the light position.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

log = logging.getLogger(__name__)

MANIFEST_FORMAT = "sfsnid-manifest"
MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# imaging models


def synth_daytime(clear, transmission, airlight) -> np.ndarray:
    """I = J t + A (1 - t), clipped to [0, 1]."""
    j = np.asarray(clear, dtype=np.float64)
    t = np.asarray(transmission, dtype=np.float64)
    a = np.asarray(airlight, dtype=np.float64)
    if a.ndim == 1 and j.ndim == 3:
        a = a[:, None, None]
    return np.clip(j * t + a * (1.0 - t), 0.0, 1.0)


@dataclass
class Light:
    position: tuple[float, float]  # (row, col) in pixels
    color: tuple[float, float, float]
    intensity: float


@dataclass
class SynthScene:
    clear: np.ndarray  # [3, H, W]
    transmission: np.ndarray | float  # [H, W] or scalar, in (0, 1]
    airlight: np.ndarray  # [3] or [3, H, W]
    lights: list[Light] = field(default_factory=list)
    glow_sigma: float = 4.0
    noise_sigma: float = 0.0

    def validate(self) -> None:
        t = np.asarray(self.transmission)
        if t.min() <= 0 or t.max() > 1:
            raise ValueError("transmission must lie in (0, 1]")
        for name, arr in (("clear", self.clear), ("airlight", self.airlight)):
            arr = np.asarray(arr)
            if arr.min() < 0 or arr.max() > 1:
                raise ValueError(f"{name} colors must lie in [0, 1]")
        for lt in self.lights:
            if min(lt.color) < 0 or max(lt.color) > 1:
                raise ValueError(f"light color {lt.color} outside [0, 1]")
            if lt.intensity < 0:
                raise ValueError(f"light intensity must be >= 0, got {lt.intensity}")
        if self.glow_sigma <= 0:
            raise ValueError(f"glow_sigma must be > 0, got {self.glow_sigma}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def glow_map(lights: list[Light], height: int, width: int, sigma: float) -> np.ndarray:
    """Sum of Gaussian glows, one per light, shape ``[3, H, W]`` and nonnegative."""
    out = np.zeros((3, height, width))
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    for lt in lights:
        r2 = (rows - lt.position[0]) ** 2 + (cols - lt.position[1]) ** 2
        profile = np.exp(-r2 / (2.0 * sigma * sigma))
        out += lt.intensity * np.asarray(lt.color, dtype=np.float64)[:, None, None] * profile
    return out


def synth_nighttime(scene: SynthScene, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Render (hazy, clear). Noise is drawn from ``seed``; everything else is deterministic."""
    scene.validate()
    j = np.asarray(scene.clear, dtype=np.float64)
    _, h, w = j.shape
    hazy = j * scene.transmission + _color(scene.airlight) * (1.0 - np.asarray(scene.transmission))
    if scene.lights:
        hazy = hazy + glow_map(scene.lights, h, w, scene.glow_sigma)
    if scene.noise_sigma > 0:
        hazy = hazy + np.random.default_rng(seed).normal(0.0, scene.noise_sigma, size=hazy.shape)
    return np.clip(hazy, 0.0, 1.0), j.copy()


def _color(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[:, None, None] if a.ndim == 1 else a


def gamma_correct(image, gamma: float) -> np.ndarray:
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    return np.power(np.asarray(image, dtype=np.float64), gamma)


# ---------------------------------------------------------------------------
# random scenes


@dataclass
class SceneConfig:
    """Distribution of random scenes; the 'real-like' split uses a shifted copy."""

    t_min: float = 0.3
    airlight_low: tuple[float, float, float] = (0.35, 0.3, 0.2)
    airlight_high: tuple[float, float, float] = (0.55, 0.5, 0.4)
    n_lights: tuple[int, int] = (1, 3)
    light_intensity: tuple[float, float] = (0.4, 0.8)
    glow_sigma: tuple[float, float] = (3.0, 6.0)
    noise_sigma: float = 0.01
    background: tuple[float, float] = (0.02, 0.12)
    n_objects: tuple[int, int] = (3, 7)
    object_level: tuple[float, float] = (0.05, 0.35)


def real_like_scene_config() -> SceneConfig:
    """Shifted distribution: brighter, bluer airlight, wider glow, more noise."""
    return SceneConfig(
        t_min=0.25,
        airlight_low=(0.4, 0.42, 0.45),
        airlight_high=(0.6, 0.62, 0.7),
        n_lights=(2, 4),
        light_intensity=(0.5, 0.9),
        glow_sigma=(5.0, 9.0),
        noise_sigma=0.025,
    )


def value_noise(rng: np.random.Generator, height: int, width: int, octaves: int = 2, base_cells: int = 3) -> np.ndarray:
    """Smooth random field in [0, 1]: bilinear-interpolated random grids, halving weight per octave."""
    field_ = np.zeros((height, width))
    total = 0.0
    for o in range(octaves):
        cells = base_cells * 2**o
        grid = rng.uniform(size=(cells + 1, cells + 1))
        r = np.linspace(0, cells, height)
        c = np.linspace(0, cells, width)
        rr, cc = np.meshgrid(r, c, indexing="ij")
        weight = 0.5**o
        field_ += weight * ndimage.map_coordinates(grid, [rr, cc], order=1)
        total += weight
    return field_ / total


def random_clear_scene(rng: np.random.Generator, size: int, cfg: SceneConfig, lights: list[Light]) -> np.ndarray:
    """Dark background with dim rectangles and the light sources as small bright discs."""
    h = w = size
    rows = np.linspace(0, 1, h)[:, None, None]
    lo, hi = rng.uniform(*cfg.background, size=2)
    tint = rng.uniform(0.7, 1.0, size=3)
    img = (lo + (hi - lo) * rows) * tint  # [H, 1, 3] gradient, broadcast below
    img = np.broadcast_to(img, (h, w, 3)).copy()
    for _ in range(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1)):
        r0, c0 = rng.integers(0, h - 4), rng.integers(0, w - 4)
        rh, cw = rng.integers(4, max(5, h // 2)), rng.integers(4, max(5, w // 3))
        img[r0 : r0 + rh, c0 : c0 + cw] = rng.uniform(*cfg.object_level) * rng.uniform(0.6, 1.0, size=3)
    yy, xx = np.mgrid[0:h, 0:w]
    for lt in lights:
        disc = (yy - lt.position[0]) ** 2 + (xx - lt.position[1]) ** 2 <= 2.0**2
        img[disc] = np.clip(np.asarray(lt.color) * (0.5 + lt.intensity), 0, 1)
    return np.clip(img.transpose(2, 0, 1), 0.0, 1.0)


def random_scene(rng: np.random.Generator, size: int, cfg: SceneConfig) -> SynthScene:
    lights = []
    for _ in range(rng.integers(cfg.n_lights[0], cfg.n_lights[1] + 1)):
        pos = (float(rng.uniform(2, size - 3)), float(rng.uniform(2, size - 3)))
        color = tuple(float(c) for c in np.clip(rng.uniform(0.6, 1.0, size=3) * (1.0, 0.85, 0.6), 0, 1))
        lights.append(Light(pos, color, float(rng.uniform(*cfg.light_intensity))))
    clear = random_clear_scene(rng, size, cfg, lights)
    t = cfg.t_min + (1.0 - cfg.t_min) * value_noise(rng, size, size)
    airlight = rng.uniform(cfg.airlight_low, cfg.airlight_high)
    return SynthScene(clear, t, airlight, lights, float(rng.uniform(*cfg.glow_sigma)), cfg.noise_sigma)


# ---------------------------------------------------------------------------
# image I/O


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG or binary PPM into ``[3, H, W]`` floats (byte / 255)."""
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt not in ("PNG", "PPM"):
                raise ValueError(f"{path}: unsupported image format {fmt!r}; expected PNG or PPM")
            if im.mode == "L":
                im = im.convert("RGB")
            if im.mode != "RGB":
                raise ValueError(f"{path}: expected 8-bit RGB, got mode {im.mode!r}")
            arr = np.asarray(im, dtype=np.uint8)
    except OSError as exc:
        raise ValueError(f"{path}: unreadable image ({exc})") from exc
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def quantize(image: np.ndarray) -> np.ndarray:
    """Clip to [0, 1] and round to the nearest byte, as ``[H, W, 3]`` uint8."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)


def save_image(image: np.ndarray, path) -> None:
    """Write ``[3, H, W]`` floats as an 8-bit RGB PNG."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"save_image expects [3,H,W], got shape {image.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantize(image), mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# manifests


@dataclass
class DatasetManifest:
    """Relative image paths per split, resolved against ``root``.

    On disk (JSON)::

        {"format": "sfsnid-manifest", "version": 1,
         "splits": {"synthetic_pairs": {"count": N, "items": [{"hazy": p, "clear": p}, ...]},
                    "real_hazy": {"count": M, "items": [p, ...]},
                    "real_clear_reference": {"count": K, "items": [p, ...]},   # optional
                    "pseudo_labels": {"count": M, "items": [p, ...]}}}         # optional
    """

    root: Path
    synthetic_pairs: list[tuple[str, str]] = field(default_factory=list)
    real_hazy: list[str] = field(default_factory=list)
    real_clear_reference: list[str] | None = None
    pseudo_labels: list[str] | None = None

    def __post_init__(self):
        self.root = Path(self.root)
        self.synthetic_pairs = [tuple(p) for p in self.synthetic_pairs]
        if self.pseudo_labels is not None and len(self.pseudo_labels) != len(self.real_hazy):
            raise ValueError(
                f"pseudo_labels ({len(self.pseudo_labels)}) must align 1:1 with real_hazy ({len(self.real_hazy)})"
            )

    @property
    def n_pairs(self) -> int:
        return len(self.synthetic_pairs)

    @property
    def n_real(self) -> int:
        return len(self.real_hazy)

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def to_dict(self) -> dict:
        splits = {
            "synthetic_pairs": {
                "count": self.n_pairs,
                "items": [{"hazy": h, "clear": c} for h, c in self.synthetic_pairs],
            },
            "real_hazy": {"count": self.n_real, "items": list(self.real_hazy)},
        }
        if self.real_clear_reference is not None:
            splits["real_clear_reference"] = {"count": len(self.real_clear_reference),
                                              "items": list(self.real_clear_reference)}
        if self.pseudo_labels is not None:
            splits["pseudo_labels"] = {"count": len(self.pseudo_labels), "items": list(self.pseudo_labels)}
        return {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "splits": splits}

    def save(self, path) -> Path:
        """Write the manifest; item paths are stored relative to the manifest's directory."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        rebased = self.rebased(path.parent)
        path.write_text(json.dumps(rebased.to_dict(), indent=2) + "\n")
        return path

    def rebased(self, new_root) -> "DatasetManifest":
        new_root = Path(new_root)

        def rel(p):
            return os.path.relpath(self.resolve(p), new_root)

        return DatasetManifest(
            new_root,
            [(rel(h), rel(c)) for h, c in self.synthetic_pairs],
            [rel(p) for p in self.real_hazy],
            None if self.real_clear_reference is None else [rel(p) for p in self.real_clear_reference],
            None if self.pseudo_labels is None else [rel(p) for p in self.pseudo_labels],
        )

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        if doc.get("format") != MANIFEST_FORMAT:
            raise ValueError(f"{path}: not a dataset manifest")
        if doc.get("version") != MANIFEST_VERSION:
            raise ValueError(f"{path}: unsupported manifest version {doc.get('version')}")
        splits = doc["splits"]
        for name, split in splits.items():
            if split["count"] != len(split["items"]):
                raise ValueError(f"{path}: split {name} count {split['count']} != {len(split['items'])} items")
        pairs = [(it["hazy"], it["clear"]) for it in splits.get("synthetic_pairs", {"items": []})["items"]]
        real = list(splits.get("real_hazy", {"items": []})["items"])
        ref = splits.get("real_clear_reference")
        pseudo = splits.get("pseudo_labels")
        return cls(path.parent, pairs, real,
                   None if ref is None else list(ref["items"]),
                   None if pseudo is None else list(pseudo["items"]))


@dataclass
class DataConfig:
    n_pairs: int = 4
    n_real: int = 2
    image_size: int = 64
    gamma: float = 1.0
    real_clear_reference: bool = False
    paired: SceneConfig = field(default_factory=SceneConfig)
    real: SceneConfig = field(default_factory=real_like_scene_config)

    def to_dict(self) -> dict:
        return asdict(self)


def _scene_rng(seed: int, split: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, split, index])


def render_pair(cfg: SceneConfig, size: int, seed: int, split: int, index: int) -> tuple[np.ndarray, np.ndarray]:
    rng = _scene_rng(seed, split, index)
    scene = random_scene(rng, size, cfg)
    return synth_nighttime(scene, seed=int(rng.integers(2**31)))


def generate_dataset(cfg: DataConfig, seed: int, out_dir) -> DatasetManifest:
    """Write N synthetic pairs and M real-like hazy images plus ``manifest.json``."""
    out = Path(out_dir)
    pairs, real, ref = [], [], []
    for i in range(cfg.n_pairs):
        hazy, clear = render_pair(cfg.paired, cfg.image_size, seed, 0, i)
        if cfg.gamma != 1.0:
            hazy, clear = gamma_correct(hazy, cfg.gamma), gamma_correct(clear, cfg.gamma)
        h_rel, c_rel = f"synthetic/hazy/{i:04d}.png", f"synthetic/clear/{i:04d}.png"
        save_image(hazy, out / h_rel)
        save_image(clear, out / c_rel)
        pairs.append((h_rel, c_rel))
    for i in range(cfg.n_real):
        hazy, clear = render_pair(cfg.real, cfg.image_size, seed, 1, i)
        rel = f"real/hazy/{i:04d}.png"
        save_image(hazy, out / rel)
        real.append(rel)
        if cfg.real_clear_reference:
            c_rel = f"real/clear/{i:04d}.png"
            save_image(clear, out / c_rel)
            ref.append(c_rel)
    manifest = DatasetManifest(out, pairs, real, ref if cfg.real_clear_reference else None)
    manifest.save(out / "manifest.json")
    log.info("wrote %d pairs and %d unlabeled images to %s", len(pairs), len(real), out)
    return manifest
