"""Training objectives, the local brightness map, and full-reference metrics.

Reductions: the spatial and frequency L1 terms are per-element means at each
scale, and the brightness term averages over images and windows. Every
term is summed over the active scales with its own weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .fourier import dft2
from .tensor import Tensor


@dataclass
class LossWeights:
    lambda_g: float = 1.0
    lambda_f: float = 1.0
    lambda_b: float = 1.0
    alpha: float = 0.1
    beta: float = 20.0
    xi: float = 1.0
    kappa: float = 1.3
    windows: tuple[int, ...] = (16, 8, 4)
    scales: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        self.windows = tuple(int(w) for w in self.windows)
        self.scales = tuple(int(s) for s in self.scales)
        if self.kappa < 1:
            raise ValueError(f"kappa must be >= 1, got {self.kappa}")
        if self.xi <= 0:
            raise ValueError(f"xi must be > 0, got {self.xi}")
        if len(self.windows) != 3 or min(self.windows) < 1:
            raise ValueError(f"windows must be three positive sizes, got {self.windows}")
        if not self.scales or any(s not in (0, 1, 2) for s in self.scales):
            raise ValueError(f"scales must be a nonempty subset of (0, 1, 2), got {self.scales}")


def _check_pairs(a: Sequence, b: Sequence, what: str) -> None:
    if len(a) != len(b):
        raise ValueError(f"{what}: {len(a)} predictions vs {len(b)} references")
    for s, (x, y) in enumerate(zip(a, b)):
        if x.shape != y.shape:
            raise ValueError(f"{what}: scale {s} shapes differ, {x.shape} vs {y.shape}")


def loss_spatial(preds: Sequence[Tensor], targets: Sequence[Tensor], w: LossWeights) -> Tensor:
    """Sum over scales of lambda_g * mean |p - y|."""
    _check_pairs(preds, targets, "loss_spatial")
    total = None
    for s in w.scales:
        term = T.absolute(preds[s] - targets[s]).mean() * w.lambda_g
        total = term if total is None else total + term
    return total


def loss_frequency(preds: Sequence[Tensor], targets: Sequence[Tensor], w: LossWeights) -> Tensor:
    """Sum over scales of lambda_f * mean(|dRe| + |dIm|) of the spectrum difference.

    The transform is linear, so F(p) - F(y) is computed as F(p - y).
    """
    _check_pairs(preds, targets, "loss_frequency")
    total = None
    for s in w.scales:
        spec = dft2(preds[s] - targets[s])
        term = (T.absolute(spec.real) + T.absolute(spec.imag)).mean() * w.lambda_f
        total = term if total is None else total + term
    return total


@dataclass
class BrightnessMap:
    values: Tensor  # [B, H/window, W/window]
    window: int


def local_brightness_map(x, window: int, pad: bool = True) -> BrightnessMap:
    """Mean over channels and each ``window x window`` tile.

    Accepts ``[3, H, W]`` or ``[B, 3, H, W]``; the result always has a batch
    axis. Sides that are not multiples of ``window`` are reflect-padded when
    ``pad`` is set, otherwise rejected.
    """
    x = T.as_tensor(x)
    if x.ndim == 3:
        x = x.reshape(1, *x.shape)
    if x.ndim != 4:
        raise ValueError(f"expected [3,H,W] or [B,3,H,W], got shape {x.shape}")
    b, c, h, w = x.shape
    ph, pw = (-h) % window, (-w) % window
    if ph or pw:
        if not pad:
            raise ValueError(f"image size {(h, w)} is not divisible by window {window}")
        x = T.pad_reflect(x, (0, ph, 0, pw))
        h, w = h + ph, w + pw
    tiles = x.reshape(b, c, h // window, window, w // window, window)
    return BrightnessMap(tiles.mean(axis=(1, 3, 5)), window)


def brightness_target(phi_x, kappa: float, xi: float):
    """xi * phi_x ** kappa; works on arrays or tensors."""
    if isinstance(phi_x, Tensor):
        return T.power(phi_x, kappa) * xi
    return xi * np.power(phi_x, kappa)


def loss_brightness(preds: Sequence[Tensor], inputs: Sequence[Tensor], w: LossWeights) -> Tensor:
    """Squared gap between the prediction's brightness map and xi * (input map)^kappa."""
    _check_pairs(preds, inputs, "loss_brightness")
    total = None
    for s in w.scales:
        gamma = w.windows[s]
        with T.no_grad():
            phi_x = local_brightness_map(T.as_tensor(inputs[s]).detach(), gamma).values.data
        if phi_x.min() < 0 or phi_x.max() > 1:
            raise ValueError(f"input brightness map at scale {s} leaves [0, 1]")
        target = brightness_target(phi_x, w.kappa, w.xi)
        diff = local_brightness_map(preds[s], gamma).values - target
        term = (diff * diff).mean() * w.lambda_b
        total = term if total is None else total + term
    return total


def total_loss(preds, targets, inputs, w: LossWeights) -> tuple[Tensor, dict[str, float]]:
    """L_G + alpha * L_F + beta * L_B; zero-weighted terms are skipped.

    Returns the differentiable total and the unweighted component values.
    """
    lg = loss_spatial(preds, targets, w)
    total = lg
    parts = {"L_G": lg.item(), "L_F": 0.0, "L_B": 0.0}
    if w.alpha:
        lf = loss_frequency(preds, targets, w)
        total = total + lf * w.alpha
        parts["L_F"] = lf.item()
    if w.beta:
        lb = loss_brightness(preds, inputs, w)
        total = total + lb * w.beta
        parts["L_B"] = lb.item()
    parts["total"] = total.item()
    return total, parts


# ---------------------------------------------------------------------------
# brightness prior statistic


@dataclass
class BrightnessPriorReport:
    trials: int
    subset_size: int
    fraction: float
    clear_sums: list[float] = field(default_factory=list)
    hazy_sums: list[float] = field(default_factory=list)


def mean_brightness(image: np.ndarray) -> float:
    """Average pixel value over all channels."""
    return float(np.mean(image))


def brightness_prior_check(clear: Sequence[np.ndarray], hazy: Sequence[np.ndarray],
                           trials: int = 100, seed: int = 0) -> BrightnessPriorReport:
    """Fraction of random half-subsets whose clear brightness sum is strictly below the hazy one.

    Sets of equal size are treated as aligned and share the sampled indices.
    """
    if not len(clear) or not len(hazy):
        raise ValueError("brightness_prior_check needs nonempty clear and hazy sets")
    mu_y = np.array([mean_brightness(im) for im in clear])
    mu_x = np.array([mean_brightness(im) for im in hazy])
    m_hat = max(1, min(len(mu_y), len(mu_x)) // 2)
    rng = np.random.default_rng(seed)
    hits = 0
    ys, xs = [], []
    for _ in range(trials):
        iy = rng.choice(len(mu_y), m_hat, replace=False)
        ix = iy if len(mu_x) == len(mu_y) else rng.choice(len(mu_x), m_hat, replace=False)
        sy, sx = float(mu_y[iy].sum()), float(mu_x[ix].sum())
        ys.append(sy)
        xs.append(sx)
        hits += sy < sx
    return BrightnessPriorReport(trials, m_hat, hits / trials, ys, xs)


# ---------------------------------------------------------------------------
# metrics

PSNR_CAP = 100.0


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shapes differ, {a.shape} vs {b.shape}")
    rmse = np.sqrt(np.mean((a - b) ** 2))
    if rmse < 1e-10:
        return PSNR_CAP
    return float(20.0 * np.log10(peak / rmse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = len(g)
    x = np.lib.stride_tricks.sliding_window_view(x, n, axis=-2) @ g
    return np.lib.stride_tricks.sliding_window_view(x, n, axis=-1) @ g


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0,
         window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM with a Gaussian window ('valid' region only), averaged over channels.

    Accepts ``[H, W]`` or ``[C, H, W]``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shapes differ, {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < window:
        raise ValueError(f"ssim: image sides {a.shape[-2:]} are smaller than the {window}px window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    per_channel = (num / den).mean(axis=(-2, -1))
    return float(per_channel.mean())
