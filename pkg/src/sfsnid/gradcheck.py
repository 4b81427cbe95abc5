"""Finite-difference verification of every registered op and the composite blocks.

Primitive ops are checked element by element with central differences; the
error for a case is ``max|analytic - numeric| / (max|numeric| + 1e-8)`` over
all inputs. Composite blocks have too many parameters for that, so each
parameter group gets a random unit direction ``d`` and the directional
derivative ``<grad, d>`` is compared with ``(L(p + h d) - L(p - h d)) / 2h``,
normalised by ``|grad|``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fourier  # noqa: F401  (registers dft2/idft2)
from . import tensor as T
from .network import NetworkConfig, SFSNiD, build_pyramid
from .objectives import LossWeights, total_loss
from .sfii import BLP, BNM, FSDA, SFII, SpectrumFilter
from .tensor import OPS, Tensor

OP_THRESHOLD = 1e-4
COMPOSITE_THRESHOLD = 1e-3
STEP = 1e-5


@dataclass
class CaseResult:
    name: str
    kind: str  # "op" or "composite"
    error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.threshold)


@dataclass
class GradcheckReport:
    results: list[CaseResult]
    missing: list[str]

    @property
    def passed(self) -> bool:
        return not self.missing and all(r.passed for r in self.results)

    def failures(self) -> list[str]:
        return [r.name for r in self.results if not r.passed] + self.missing

    def format(self) -> str:
        lines = []
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            lines.append(f"{r.kind:9s} {r.name:22s} worst_rel_err={r.error:.3e} threshold={r.threshold:.0e} {status}")
        for name in self.missing:
            lines.append(f"op        {name:22s} no gradient case registered FAIL")
        n_ops = sum(r.kind == "op" for r in self.results)
        lines.append(f"covered {n_ops}/{len(OPS)} registered ops; {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# primitive ops


def _leaves(*arrays) -> list[Tensor]:
    return [Tensor(a, requires_grad=True) for a in arrays]


def _away_from_zero(rng, shape, lo=0.2, hi=1.0):
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


def _op_cases(rng: np.random.Generator) -> dict[str, list[tuple[list[np.ndarray], Callable]]]:
    """Map op name -> list of (input arrays, fn(tensors) -> Tensor or tuple)."""
    n = rng.standard_normal
    img = (2, 3, 5, 6)
    c = {}
    c["add"] = [([n((3, 4)), n((1, 4))], lambda t: T.add(t[0], t[1]))]
    c["sub"] = [([n((3, 4)), n((3, 1))], lambda t: T.sub(t[0], t[1]))]
    c["mul"] = [([n((3, 4)), n((3, 4))], lambda t: T.mul(t[0], t[1]))]
    c["div"] = [([n((3, 4)), _away_from_zero(rng, (3, 4), 0.5, 1.5)], lambda t: T.div(t[0], t[1]))]
    c["neg"] = [([n((3, 4))], lambda t: -t[0])]
    c["power"] = [([rng.uniform(0.5, 2.0, (3, 4))], lambda t: T.power(t[0], 1.3)),
                  ([n((3, 4))], lambda t: T.power(t[0], 2.0))]
    c["abs"] = [([_away_from_zero(rng, (3, 4))], lambda t: T.absolute(t[0]))]
    c["cos"] = [([n((3, 4))], lambda t: T.cos(t[0]))]
    c["sin"] = [([n((3, 4))], lambda t: T.sin(t[0]))]
    c["hypot"] = [([_away_from_zero(rng, (3, 4)), n((3, 4))], lambda t: T.hypot(t[0], t[1]))]
    c["atan2"] = [([n((3, 4)), rng.uniform(0.3, 1.5, (3, 4))], lambda t: T.atan2(t[0], t[1])),
                  ([_away_from_zero(rng, (3, 4), 0.3, 1.5), n((3, 4))], lambda t: T.atan2(t[0], t[1]))]
    c["leaky_relu"] = [([_away_from_zero(rng, (3, 4), 0.05, 1.0)], lambda t: T.leaky_relu(t[0], 0.01))]
    c["sigmoid"] = [([n((3, 4)) * 2], lambda t: T.sigmoid(t[0]))]
    c["softmax"] = [([n((2, 3, 5))], lambda t: T.softmax(t[0], axis=-1))]
    c["sum"] = [([n((2, 3, 4))], lambda t: t[0].sum(axis=1)), ([n((2, 3))], lambda t: t[0].sum())]
    c["mean"] = [([n((2, 3, 4))], lambda t: t[0].mean(axis=(0, 2), keepdims=True))]
    c["reshape"] = [([n((2, 6))], lambda t: t[0].reshape(3, 4))]
    c["transpose"] = [([n((2, 3, 4))], lambda t: t[0].transpose(2, 0, 1))]
    c["getitem"] = [([n((4, 5))], lambda t: t[0][1:3, ::2]),
                    ([n((4, 5))], lambda t: t[0][np.array([0, 2, 2]), 1:])]
    c["take"] = [([n(9)], lambda t: T.take(t[0], np.array([[0, 4, 4], [8, 1, 0]])))]
    c["concat"] = [([n((2, 1, 3)), n((2, 2, 3))], lambda t: T.concat([t[0], t[1]], axis=1))]
    c["matmul"] = [([n((2, 3, 4)), n((4, 5))], lambda t: T.matmul(t[0], t[1]))]
    c["conv2d"] = [
        ([n(img), n((4, 3, 3, 3)) * 0.3, n(4)], lambda t: T.conv2d(t[0], t[1], t[2])),
        ([n(img), n((4, 3, 3, 3)) * 0.3, n(4)], lambda t: T.conv2d(t[0], t[1], t[2], stride=2)),
        ([n(img), n((2, 3, 1, 1))], lambda t: T.conv2d(t[0], t[1])),
    ]
    c["global_avg_pool"] = [([n(img)], lambda t: T.global_avg_pool(t[0]))]
    c["layer_norm"] = [([n(img), n(3), n(3)], lambda t: T.layer_norm(t[0], t[1], t[2]))]
    c["upsample2x"] = [([n((1, 2, 3, 4))], lambda t: T.upsample2x(t[0]))]
    c["downsample2x"] = [([n((1, 2, 4, 6))], lambda t: T.downsample2x(t[0]))]
    c["pad_reflect"] = [([n((1, 2, 3, 4))], lambda t: T.pad_reflect(t[0], (0, 2, 1, 3))),
                        ([n((1, 1, 1, 2))], lambda t: T.pad_reflect(t[0], (0, 3, 0, 1)))]
    c["dft2"] = [([n((1, 2, 4, 5))], lambda t: (lambda s: (s.real, s.imag))(fourier.dft2(t[0])))]
    c["idft2"] = [([n((1, 2, 4, 5)), n((1, 2, 4, 5))],
                   lambda t: fourier.idft2(fourier.ComplexSpectrum(t[0], t[1])))]
    return c


def _outputs(out) -> tuple[Tensor, ...]:
    return out if isinstance(out, tuple) else (out,)


def _weighted_sum(outs, weights) -> Tensor:
    total = None
    for o, wgt in zip(outs, weights):
        term = (o * Tensor(wgt)).sum()
        total = term if total is None else total + term
    return total


def check_op_case(arrays: list[np.ndarray], fn: Callable, rng: np.random.Generator, h: float = STEP) -> float:
    leaves = _leaves(*arrays)
    outs = _outputs(fn(leaves))
    weights = [rng.standard_normal(o.shape) for o in outs]
    _weighted_sum(outs, weights).backward()
    analytic = [t.grad.copy() for t in leaves]

    def value(vals) -> float:
        with T.no_grad():
            return float(_weighted_sum(_outputs(fn([Tensor(v) for v in vals])), weights).data)

    worst = 0.0
    for i, a in enumerate(arrays):
        fd = np.zeros_like(a, dtype=np.float64)
        for idx in np.ndindex(a.shape):
            plus = [v.copy() for v in arrays]
            minus = [v.copy() for v in arrays]
            plus[i][idx] += h
            minus[i][idx] -= h
            fd[idx] = (value(plus) - value(minus)) / (2 * h)
        err = np.max(np.abs(analytic[i] - fd)) / (np.max(np.abs(fd)) + 1e-8)
        worst = max(worst, float(err))
    return worst


# ---------------------------------------------------------------------------
# composites


def directional_check(params: dict[str, Tensor], loss_fn: Callable[[], Tensor], groups: dict[str, list[str]],
                      rng: np.random.Generator, h: float = STEP) -> float:
    """Worst normalised directional-derivative error over parameter groups."""
    for p in params.values():
        p.zero_grad()
    loss_fn().backward()
    worst = 0.0
    for names in groups.values():
        dirs = {k: rng.standard_normal(params[k].shape) for k in names}
        norm = np.sqrt(sum(float(np.sum(d * d)) for d in dirs.values()))
        dirs = {k: d / norm for k, d in dirs.items()}
        analytic = sum(float(np.sum(params[k].grad * d)) for k, d in dirs.items())
        gnorm = np.sqrt(sum(float(np.sum(params[k].grad ** 2)) for k in names))
        base = {k: params[k].data.copy() for k in names}

        def shifted(sign: float) -> float:
            for k, d in dirs.items():
                params[k].data[...] = base[k] + sign * h * d
            with T.no_grad():
                return float(loss_fn().data)

        numeric = (shifted(1.0) - shifted(-1.0)) / (2 * h)
        for k in names:
            params[k].data[...] = base[k]
        worst = max(worst, abs(analytic - numeric) / (gnorm + 1e-8))
    return worst


def _group_by_prefix(names, depth: int) -> dict[str, list[str]]:
    groups: dict[str, list[str]] = {}
    for name in names:
        groups.setdefault(".".join(name.split(".")[:depth]), []).append(name)
    return groups


def _module_case(module, x: np.ndarray, rng: np.random.Generator, depth: int = 1) -> float:
    inp = Tensor(x, requires_grad=True)
    params = dict(module.named_parameters())
    params["<input>"] = inp
    out_w = rng.standard_normal(module(inp).shape)

    def loss_fn():
        return (module(inp) * Tensor(out_w)).sum()

    return directional_check(params, loss_fn, _group_by_prefix(params, depth), rng)


def _composite_cases(cfg: NetworkConfig, rng: np.random.Generator) -> dict[str, Callable[[], float]]:
    ch = cfg.base_channels
    feat = rng.standard_normal((1, ch, 8, 8))
    window = min(cfg.window, 4)
    kw = dict(cfg.block_kwargs(), window=window)

    def spectrum_filter():
        return _module_case(SpectrumFilter(ch, rng), rng.uniform(0.1, 2.0, (1, ch, 8, 8)), rng)

    def total():
        net_cfg = dataclasses.replace(cfg, window=window)
        net = SFSNiD(net_cfg, seed=int(rng.integers(2**31)))
        size = net_cfg.size_multiple
        hazy = rng.uniform(0.05, 0.95, (1, 3, size, size))
        clear = rng.uniform(0.05, 0.95, (1, 3, size, size))
        weights = LossWeights()
        params = dict(net.named_parameters())
        inputs = build_pyramid(Tensor(hazy))
        with T.no_grad():
            targets = build_pyramid(Tensor(clear))

        def loss_fn():
            preds = net(inputs)
            return total_loss(preds, targets.levels, inputs.levels, weights)[0]

        return directional_check(params, loss_fn, _group_by_prefix(params, 3), rng)

    return {
        "spectrum_filter": spectrum_filter,
        "fsda": lambda: _module_case(FSDA(ch, rng), feat, rng),
        "blp": lambda: _module_case(BLP(ch, rng, window, fdp=cfg.fdp, local_perception=cfg.local_perception),
                                    feat, rng, depth=2),
        "bnm": lambda: _module_case(BNM(ch, rng, cfg.bnm_frequency, cfg.bnm_spatial), feat, rng),
        "sfii_block": lambda: _module_case(SFII(ch, rng, **kw), feat, rng, depth=2),
        "total_loss": total,
    }


def gradcheck(cfg: NetworkConfig | None = None, seed: int = 0, ops_only: bool = False) -> GradcheckReport:
    """Run the full suite in float64. ``cfg`` sizes the composite checks (use a tiny network)."""
    cfg = cfg or NetworkConfig(base_channels=4, sfii_blocks_per_stage=1)
    prev = T.get_default_dtype()
    T.set_default_dtype(np.float64)
    try:
        rng = np.random.default_rng(seed)
        cases = _op_cases(rng)
        results = []
        for name in sorted(cases):
            worst = max(check_op_case(arrays, fn, rng) for arrays, fn in cases[name])
            results.append(CaseResult(name, "op", worst, OP_THRESHOLD))
        missing = sorted(set(OPS) - set(cases))
        if not ops_only:
            for name, run in _composite_cases(cfg, rng).items():
                results.append(CaseResult(name, "composite", run(), COMPOSITE_THRESHOLD))
        return GradcheckReport(results, missing)
    finally:
        T.set_default_dtype(prev)
