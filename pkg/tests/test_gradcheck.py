import numpy as np
import pytest

from sfsnid import gradcheck as G
from sfsnid.tensor import OPS, Function


@pytest.fixture(scope="module")
def report():
    return G.gradcheck()


def test_fresh_build_passes(report):
    assert report.passed, report.format()
    composites = {r.name for r in report.results if r.kind == "composite"}
    assert {"fsda", "blp", "bnm", "sfii_block", "total_loss"} <= composites


def test_report_covers_every_registered_op(report):
    ops = {r.name for r in report.results if r.kind == "op"}
    assert ops == set(OPS) and not report.missing
    assert f"covered {len(OPS)}/{len(OPS)}" in report.format()


@pytest.mark.parametrize("victim", ["sigmoid", "conv2d", "dft2", "layer_norm"])
def test_corrupted_backward_fails_exactly_that_op(monkeypatch, victim):
    original = OPS[victim].backward

    def corrupted(ctx, *grads):
        out = original(ctx, *grads)
        out = out if isinstance(out, tuple) else (out,)
        return tuple(None if g is None else 1.5 * g for g in out)

    monkeypatch.setattr(OPS[victim], "backward", staticmethod(corrupted))
    rep = G.gradcheck(ops_only=True)
    assert not rep.passed
    assert [r.name for r in rep.results if not r.passed] == [victim]


def test_unregistered_case_is_reported():
    class Orphan(Function):
        name = "orphan_test_op"

        @staticmethod
        def forward(ctx, a):
            return a

        @staticmethod
        def backward(ctx, g):
            return (g,)

    try:
        rep = G.gradcheck(ops_only=True)
        assert rep.missing == ["orphan_test_op"] and not rep.passed
        assert "orphan_test_op" in rep.failures()
    finally:
        del OPS["orphan_test_op"]


def test_directional_check_detects_wrong_gradient():
    from sfsnid.tensor import Tensor
    rng = np.random.default_rng(0)
    p = Tensor(rng.standard_normal(5), requires_grad=True)

    def loss():
        return (p * p).sum()

    assert G.directional_check({"p": p}, loss, {"g": ["p"]}, rng) < 1e-8
