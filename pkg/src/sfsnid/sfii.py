"""Spatial/frequency interaction block and its sub-blocks.

Data flow of one block (all maps are ``[B, C, H, W]``)::

    z --LN--> z_l --FSDA_q/k/v--> Q, K, V --8x8 window attention--> + z = z*
    z* --FSDA_a--> z_fn
    z* --conv3-lrelu-conv3--> z_sn
    conv3([z_fn, z_sn + z*]) + z* = z~

Every learned path ends in a residual addition, so zeroing a sub-block's
parameters turns it into the identity map.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .fourier import AmpPhase, dft2, from_amp_phase, idft2, to_amp_phase
from .nn import Conv2d, LayerNorm, Module
from .tensor import Tensor

LEAKY_SLOPE = 0.01


class SpectrumFilter(Module):
    """Channel-reweighted residual filter applied to an amplitude or phase plane."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.pre = Conv2d(channels, channels, 1, rng)
        self.squeeze = Conv2d(channels, channels, 1, rng)
        self.excite = Conv2d(channels, channels, 1, rng)
        self.post = Conv2d(channels, channels, 1, rng)

    def forward(self, s: Tensor) -> Tensor:
        if s.shape[1] != self.pre.weight.shape[1]:
            raise ValueError(f"spectrum filter expects {self.pre.weight.shape[1]} channels, got {s.shape[1]}")
        s_star = T.leaky_relu(self.pre(s), LEAKY_SLOPE)
        w = self.channel_weights(s_star)
        return self.post(w * s_star) + s

    def channel_weights(self, s_star: Tensor) -> Tensor:
        """Per-channel gate in (0, 1), shape ``[B, C, 1, 1]``."""
        h = T.leaky_relu(self.squeeze(T.global_avg_pool(s_star)), LEAKY_SLOPE)
        return T.sigmoid(self.excite(h))


class FSDA(Module):
    """Filter amplitude and phase spectra independently, then return to space."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.amplitude = SpectrumFilter(channels, rng)
        self.phase = SpectrumFilter(channels, rng)

    def forward(self, z: Tensor) -> Tensor:
        ap = to_amp_phase(dft2(z))
        filtered = AmpPhase(self.amplitude(ap.amplitude), self.phase(ap.phase))
        return idft2(from_amp_phase(filtered, validate=False))


class FDP(Module):
    """Layer norm followed by three independent FSDA projections (Q, K, V)."""

    def __init__(self, channels: int, rng: np.random.Generator, enabled: bool = True):
        self.enabled = enabled
        self.norm = LayerNorm(channels)
        if enabled:
            self.q = FSDA(channels, rng)
            self.k = FSDA(channels, rng)
            self.v = FSDA(channels, rng)

    def forward(self, z: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        zl = self.norm(z)
        if not self.enabled:
            return zl, zl, zl
        return self.q(zl), self.k(zl), self.v(zl)


def relative_position_index(window: int) -> np.ndarray:
    """Index into a (2w-1)^2 bias table for every (query, key) pair of a window."""
    hh, ww = np.meshgrid(np.arange(window), np.arange(window), indexing="ij")
    coords = np.stack([hh.ravel(), ww.ravel()])  # (2, w*w)
    rel = coords[:, :, None] - coords[:, None, :] + (window - 1)
    return rel[0] * (2 * window - 1) + rel[1]


def _to_windows(x: Tensor, window: int) -> Tensor:
    b, c, h, w = x.shape
    nh, nw = h // window, w // window
    x = x.reshape(b, c, nh, window, nw, window).transpose(0, 2, 4, 3, 5, 1)
    return x.reshape(b * nh * nw, window * window, c)


def _from_windows(x: Tensor, b: int, c: int, h: int, w: int, window: int) -> Tensor:
    nh, nw = h // window, w // window
    x = x.reshape(b, nh, nw, window, window, c).transpose(0, 5, 1, 3, 2, 4)
    return x.reshape(b, c, h, w)


def window_padding(h: int, w: int, window: int) -> tuple[int, int, int, int]:
    return 0, (-h) % window, 0, (-w) % window


def window_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    bias_table: Tensor | None = None,
    window: int = 8,
    return_probs: bool = False,
):
    """Single-head self-attention inside non-overlapping ``window x window`` tiles.

    Feature maps whose sides are not multiples of ``window`` are reflect-padded
    at the bottom/right and the result is cropped back. With
    ``return_probs`` the ``[n_windows * B, w*w, w*w]`` probabilities are
    returned as well.
    """
    if not (q.shape == k.shape == v.shape):
        raise ValueError(f"Q/K/V shapes differ: {q.shape}, {k.shape}, {v.shape}")
    b, c, h, w = q.shape
    pads = window_padding(h, w, window)
    q, k, v = (T.pad_reflect(t, pads) for t in (q, k, v))
    hp, wp = q.shape[-2:]
    qw, kw, vw = (_to_windows(t, window) for t in (q, k, v))
    scores = (qw @ kw.transpose(0, 2, 1)) * (1.0 / math.sqrt(c))
    if bias_table is not None:
        scores = scores + T.take(bias_table, relative_position_index(window))
    probs = T.softmax(scores, axis=-1)
    out = _from_windows(probs @ vw, b, c, hp, wp, window)
    if hp != h or wp != w:
        out = out[:, :, :h, :w]
    return (out, probs) if return_probs else out


class WindowAttention(Module):
    def __init__(self, window: int, rng: np.random.Generator):
        self.window = window
        self.bias_table = Tensor(rng.uniform(-0.02, 0.02, size=(2 * window - 1) ** 2), requires_grad=True)

    def forward(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        return window_attention(q, k, v, self.bias_table, self.window)


class BLP(Module):
    """Frequency-projected window attention with a residual connection."""

    def __init__(self, channels: int, rng: np.random.Generator, window: int = 8,
                 fdp: bool = True, local_perception: bool = True):
        self.local_perception = local_perception
        self.fdp = FDP(channels, rng, enabled=fdp)
        self.attention = WindowAttention(window, rng)

    def forward(self, z: Tensor) -> Tensor:
        q, k, v = self.fdp(z)
        a = self.attention(q, k, v) if self.local_perception else v
        return a + z


class BNM(Module):
    """Parallel frequency (FSDA) and spatial (conv) branches fused by a 3x3 conv."""

    def __init__(self, channels: int, rng: np.random.Generator,
                 frequency: bool = True, spatial: bool = True):
        self.frequency = frequency
        self.spatial = spatial
        if frequency:
            self.fsda = FSDA(channels, rng)
        if spatial:
            self.conv1 = Conv2d(channels, channels, 3, rng)
            self.conv2 = Conv2d(channels, channels, 3, rng)
        self.fuse = Conv2d(2 * channels, channels, 3, rng)

    def forward(self, z_star: Tensor) -> Tensor:
        z_fn = self.fsda(z_star) if self.frequency else z_star
        if self.spatial:
            z_sn = self.conv2(T.leaky_relu(self.conv1(z_star), LEAKY_SLOPE))
            spatial = z_sn + z_star
        else:
            spatial = z_star
        return self.fuse(T.concat([z_fn, spatial], axis=1)) + z_star


class SFII(Module):
    def __init__(self, channels: int, rng: np.random.Generator, window: int = 8,
                 fdp: bool = True, local_perception: bool = True,
                 bnm_frequency: bool = True, bnm_spatial: bool = True):
        self.blp = BLP(channels, rng, window, fdp=fdp, local_perception=local_perception)
        self.bnm = BNM(channels, rng, frequency=bnm_frequency, spatial=bnm_spatial)

    def forward(self, z: Tensor) -> Tensor:
        return self.bnm(self.blp(z))
