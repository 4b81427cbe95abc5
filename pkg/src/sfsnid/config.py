"""Run configuration and its INI-style file format.

Sections ``[network]``, ``[train]``, ``[loss]`` and ``[data]`` map onto the
dataclasses below; ``[data.paired]`` and ``[data.real]`` override the two
scene distributions. Values are Python literals (``0.1``, ``(16, 8, 4)``,
``True``). Unknown keys are an error.
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .data import DataConfig, SceneConfig, real_like_scene_config
from .network import NetworkConfig
from .objectives import LossWeights


@dataclass
class TrainConfig:
    batch_size: int = 4
    image_size: int = 256
    lr: float = 1e-4
    lr_decay: float = 0.95
    decay_every: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 100
    steps: int = 0  # 0: run all epochs
    seed: int = 0
    pseudo_ratio: int = 1  # pseudo-label batches per synthetic batch when retraining
    checkpoint_every: int = 0  # 0: final checkpoint only
    divergence_factor: float = 10.0
    divergence_patience: int = 50

    def __post_init__(self):
        for name in ("batch_size", "image_size", "decay_every", "epochs", "pseudo_ratio"):
            if getattr(self, name) <= 0:
                raise ValueError(f"train.{name} must be positive")
        if self.lr < 0 or not (0 < self.lr_decay <= 1):
            raise ValueError("train.lr must be >= 0 and train.lr_decay in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.decay_every)


@dataclass
class Config:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        data = dict(d.get("data", {}))
        paired = SceneConfig(**_tuplify(data.pop("paired", {})))
        real = SceneConfig(**_tuplify(data.pop("real", asdict(real_like_scene_config()))))
        return cls(
            network=NetworkConfig(**d.get("network", {})),
            train=TrainConfig(**d.get("train", {})),
            loss=LossWeights(**_tuplify(d.get("loss", {}))),
            data=DataConfig(paired=paired, real=real, **data),
        )

    def replace(self, **sections) -> "Config":
        return dataclasses.replace(self, **sections)


def toy_config() -> Config:
    """Desk-scale settings: 64 px images, 4-channel single-block network."""
    return Config(
        network=NetworkConfig(base_channels=4, sfii_blocks_per_stage=1),
        train=TrainConfig(image_size=64, lr=1e-3),
    )


def _tuplify(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def _parse_value(raw: str):
    text = raw.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _coerce(value, default, where: str):
    """Match ``value`` to the type of the default it replaces."""
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, tuple):
        ok = isinstance(value, (tuple, list))
        value = tuple(value) if ok else value
    else:
        ok = True
    if not ok:
        raise ValueError(f"{where}: expected {type(default).__name__}, got {value!r}")
    return value


def _apply(obj, section: configparser.SectionProxy, name: str):
    known = {f.name for f in dataclasses.fields(obj)}
    updates = {}
    for key, raw in section.items():
        if key not in known:
            raise ValueError(f"[{name}] unknown key {key!r}")
        updates[key] = _coerce(_parse_value(raw), getattr(obj, key), f"[{name}] {key}")
    return dataclasses.replace(obj, **updates)


def load_config(path=None) -> Config:
    """Read an INI file on top of the toy defaults (or return them if ``path`` is None)."""
    cfg = toy_config()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    if not parser.read(path):
        raise FileNotFoundError(path)
    allowed = {"network", "train", "loss", "data", "data.paired", "data.real"}
    unknown = set(parser.sections()) - allowed
    if unknown:
        raise ValueError(f"{path}: unknown sections {sorted(unknown)}")
    net, train, loss, data = cfg.network, cfg.train, cfg.loss, cfg.data
    if parser.has_section("network"):
        net = _apply(net, parser["network"], "network")
    if parser.has_section("train"):
        train = _apply(train, parser["train"], "train")
    if parser.has_section("loss"):
        loss = _apply(loss, parser["loss"], "loss")
    paired, real = data.paired, data.real
    if parser.has_section("data.paired"):
        paired = _apply(paired, parser["data.paired"], "data.paired")
    if parser.has_section("data.real"):
        real = _apply(real, parser["data.real"], "data.real")
    data = dataclasses.replace(data, paired=paired, real=real)
    if parser.has_section("data"):
        data = _apply(data, parser["data"], "data")
    return Config(net, train, loss, data)


def dump_config(cfg: Config, path) -> None:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    d = cfg.to_dict()
    data = d.pop("data")
    for section in ("network", "train", "loss"):
        parser[section] = {k: repr(tuple(v) if isinstance(v, list) else v) for k, v in d[section].items()}
    for sub in ("paired", "real"):
        parser[f"data.{sub}"] = {k: repr(tuple(v) if isinstance(v, list) else v) for k, v in data.pop(sub).items()}
    parser["data"] = {k: repr(v) for k, v in data.items()}
    with open(Path(path), "w") as fh:
        parser.write(fh)
