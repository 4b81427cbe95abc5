"""Three-scale dehazing network.

Each scale has its own encoder-decoder trunk::

    ConvI -> [SFII x k -> ConvD] x depth -> SFII x k (bottleneck)
          -> [ConvU -> concat(skip) -> 1x1 fuse -> SFII x k] x depth -> ConvO

Scales run coarse to fine. The prediction of scale s+1 is upsampled and
concatenated with the hazy input of scale s before that scale's ConvI.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module, count_params
from .sfii import SFII
from .tensor import Tensor

N_SCALES = 3


@dataclass
class NetworkConfig:
    base_channels: int = 24
    sfii_blocks_per_stage: int = 2
    depth: int = 2
    window: int = 8
    # ablation switches; all True is the full model
    fdp: bool = True
    local_perception: bool = True
    bnm_frequency: bool = True
    bnm_spatial: bool = True

    def __post_init__(self):
        if self.base_channels < 4:
            raise ValueError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.sfii_blocks_per_stage < 1:
            raise ValueError(f"sfii_blocks_per_stage must be >= 1, got {self.sfii_blocks_per_stage}")
        if self.depth < 0:
            raise ValueError(f"depth must be >= 0, got {self.depth}")

    @property
    def size_multiple(self) -> int:
        """Input sides must be multiples of this for exact halving everywhere."""
        return 4 * 2**self.depth

    def block_kwargs(self) -> dict:
        return dict(window=self.window, fdp=self.fdp, local_perception=self.local_perception,
                    bnm_frequency=self.bnm_frequency, bnm_spatial=self.bnm_spatial)


@dataclass
class ImagePyramid:
    levels: list[Tensor] = field(default_factory=list)

    def __getitem__(self, s: int) -> Tensor:
        return self.levels[s]

    def __len__(self) -> int:
        return len(self.levels)


def build_pyramid(image: Tensor, check_range: bool = True) -> ImagePyramid:
    """Full, half and quarter resolution copies via 2x2 average pooling."""
    image = T.as_tensor(image)
    if image.ndim != 4:
        raise ValueError(f"expected [B,3,H,W], got shape {image.shape}")
    h, w = image.shape[-2:]
    if h % 4 or w % 4:
        raise ValueError(f"image size {(h, w)} is not divisible by 4; reflect-pad it first")
    if check_range and (image.data.min() < 0 or image.data.max() > 1):
        raise ValueError("pyramid images must lie in [0, 1]")
    levels = [image]
    for _ in range(N_SCALES - 1):
        levels.append(T.downsample2x(levels[-1]))
    return ImagePyramid(levels)


class EncoderStage(Module):
    def __init__(self, width: int, cfg: NetworkConfig, rng: np.random.Generator):
        self.blocks = [SFII(width, rng, **cfg.block_kwargs()) for _ in range(cfg.sfii_blocks_per_stage)]
        self.down = Conv2d(width, 2 * width, 3, rng, stride=2)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        for blk in self.blocks:
            x = blk(x)
        return x, self.down(x)


class DecoderStage(Module):
    def __init__(self, width: int, cfg: NetworkConfig, rng: np.random.Generator):
        self.up = Conv2d(2 * width, width, 3, rng)
        self.fuse = Conv2d(2 * width, width, 1, rng)
        self.blocks = [SFII(width, rng, **cfg.block_kwargs()) for _ in range(cfg.sfii_blocks_per_stage)]

    def forward(self, x: Tensor, skip: Tensor) -> Tensor:
        x = self.up(T.upsample2x(x))
        x = self.fuse(T.concat([x, skip], axis=1))
        for blk in self.blocks:
            x = blk(x)
        return x


class ScaleNet(Module):
    """Encoder-decoder trunk for one pyramid level."""

    def __init__(self, in_channels: int, cfg: NetworkConfig, rng: np.random.Generator):
        c = cfg.base_channels
        self.conv_in = Conv2d(in_channels, c, 3, rng)
        self.encoders = [EncoderStage(c * 2**i, cfg, rng) for i in range(cfg.depth)]
        self.bottleneck = [SFII(c * 2**cfg.depth, rng, **cfg.block_kwargs())
                           for _ in range(cfg.sfii_blocks_per_stage)]
        self.decoders = [DecoderStage(c * 2**i, cfg, rng) for i in reversed(range(cfg.depth))]
        self.conv_out = Conv2d(c, 3, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv_in(x)
        skips = []
        for enc in self.encoders:
            skip, h = enc(h)
            skips.append(skip)
        for blk in self.bottleneck:
            h = blk(h)
        for dec, skip in zip(self.decoders, reversed(skips)):
            h = dec(h, skip)
        return self.conv_out(h)


class SFSNiD(Module):
    """Multi-scale network; ``forward`` maps an input pyramid to predictions p^0..p^2."""

    def __init__(self, cfg: NetworkConfig | None = None, seed: int = 0):
        self.cfg = cfg or NetworkConfig()
        rng = np.random.default_rng(seed)
        # scale 2 (coarsest) sees only the hazy image; finer scales also get the upsampled coarser prediction
        self.scales = [ScaleNet(3 if s == N_SCALES - 1 else 6, self.cfg, rng) for s in range(N_SCALES)]

    def forward(self, pyramid: ImagePyramid | list[Tensor]) -> list[Tensor]:
        levels = pyramid.levels if isinstance(pyramid, ImagePyramid) else list(pyramid)
        if len(levels) != N_SCALES:
            raise ValueError(f"expected {N_SCALES} pyramid levels, got {len(levels)}")
        m = self.cfg.size_multiple
        h, w = levels[0].shape[-2:]
        if h % m or w % m:
            raise ValueError(f"input size {(h, w)} must be a multiple of {m} for this network depth")
        for s in range(1, N_SCALES):
            if levels[s].shape[-2:] != (h >> s, w >> s):
                raise ValueError(f"pyramid level {s} has shape {levels[s].shape}, expected sides {(h >> s, w >> s)}")
        preds: list[Tensor | None] = [None] * N_SCALES
        coarse = None
        for s in reversed(range(N_SCALES)):
            x = levels[s] if coarse is None else T.concat([levels[s], T.upsample2x(coarse)], axis=1)
            preds[s] = self.scales[s](x)
            coarse = preds[s]
        return preds

    def num_params(self) -> int:
        return count_params(self)
