import math

import numpy as np
import pytest

from sfsnid import tensor as T
from sfsnid.sfii import BLP, BNM, FDP, FSDA, LEAKY_SLOPE, SFII, SpectrumFilter, window_attention
from sfsnid.tensor import Tensor


def dense_window_attention(q, k, v, table, window):
    """Brute force: loop over windows, build each window's token list and bias by hand."""
    b, c, h, w = q.shape
    out = np.zeros_like(q)
    probs = []
    side = 2 * window - 1
    for n in range(b):
        for wy in range(0, h, window):
            for wx in range(0, w, window):
                pos = [(wy + i, wx + j) for i in range(window) for j in range(window)]
                Q = np.array([q[n, :, y, x] for y, x in pos])
                K = np.array([k[n, :, y, x] for y, x in pos])
                V = np.array([v[n, :, y, x] for y, x in pos])
                bias = np.zeros((len(pos), len(pos)))
                for a, (ya, xa) in enumerate(pos):
                    for bb, (yb, xb) in enumerate(pos):
                        bias[a, bb] = table[(ya - yb + window - 1) * side + (xa - xb + window - 1)]
                s = Q @ K.T / math.sqrt(c) + bias
                p = np.exp(s - s.max(axis=1, keepdims=True))
                p /= p.sum(axis=1, keepdims=True)
                probs.append(p)
                o = p @ V
                for t, (y, x) in enumerate(pos):
                    out[n, :, y, x] = o[t]
    return out, probs


@pytest.fixture
def qkv(rng):
    return [rng.standard_normal((2, 3, 16, 8)) for _ in range(3)]


def test_window_attention_matches_dense(qkv, rng):
    table = rng.uniform(-0.5, 0.5, 15 * 15)
    got, probs = window_attention(*(Tensor(a) for a in qkv), Tensor(table), window=8, return_probs=True)
    want, want_probs = dense_window_attention(*qkv, table, 8)
    assert np.max(np.abs(got.data - want)) < 1e-6
    assert np.allclose(probs.data.sum(axis=-1), 1.0, atol=1e-6)
    assert np.max(np.abs(np.sort(probs.data.ravel()) - np.sort(np.concatenate([p.ravel() for p in want_probs])))) < 1e-6


def test_constant_values_pass_through(rng):
    q, k = rng.standard_normal((2, 1, 4, 8, 8))
    v = np.broadcast_to(rng.standard_normal((1, 4, 1, 1)), (1, 4, 8, 8)).copy()
    out = window_attention(Tensor(q), Tensor(k), Tensor(v), window=8).data
    assert np.allclose(out, v, atol=1e-12)


@pytest.mark.parametrize("which", [0, 1, 2])
def test_single_pixel_change_stays_in_its_window(qkv, rng, which):
    table = Tensor(rng.uniform(-0.02, 0.02, 225))
    base = window_attention(*(Tensor(a) for a in qkv), table).data
    changed = [a.copy() for a in qkv]
    changed[which][1, :, 10, 3] += 5.0  # window (1, 0) of image 1
    out = window_attention(*(Tensor(a) for a in changed), table).data
    diff = np.abs(out - base).max(axis=1)
    mask = np.zeros_like(diff, dtype=bool)
    mask[1, 8:16, 0:8] = True
    assert np.all(diff[~mask] == 0.0)
    assert diff[mask].max() > 0


def test_swapping_windows_swaps_outputs(qkv):
    def swap(a):
        a = a.copy()
        top, bottom = a[:, :, :8].copy(), a[:, :, 8:].copy()
        a[:, :, :8], a[:, :, 8:] = bottom, top
        return a

    base = window_attention(*(Tensor(a) for a in qkv)).data
    out = window_attention(*(Tensor(swap(a)) for a in qkv)).data
    assert np.array_equal(out, swap(base))


def test_non_multiple_sizes_are_padded_and_cropped(rng):
    q, k, v = rng.standard_normal((3, 1, 2, 10, 13))
    out = window_attention(Tensor(q), Tensor(k), Tensor(v), window=8)
    assert out.shape == (1, 2, 10, 13)
    # the first window only sees rows/cols 0..7, which need no padding
    ref, _ = dense_window_attention(q[..., :8, :8], k[..., :8, :8], v[..., :8, :8], np.zeros(225), 8)
    assert np.allclose(out.data[..., :8, :8], ref, atol=1e-12)


def test_spectrum_filter_zero_parameters_is_identity(rng):
    sf = SpectrumFilter(3, rng).zero_()
    s = rng.standard_normal((1, 3, 4, 4))
    assert np.array_equal(sf(Tensor(s)).data, s)
    w = sf.channel_weights(Tensor(s)).data
    assert np.all(w == 0.5)


def test_spectrum_filter_hand_trace(rng):
    sf = SpectrumFilter(1, rng)
    vals = dict(pre=(2.0, -1.0), squeeze=(0.5, 0.1), excite=(-1.5, 0.3), post=(0.7, 0.2))
    for name, (wv, bv) in vals.items():
        conv = getattr(sf, name)
        conv.weight.data[...] = wv
        conv.bias.data[...] = bv
    x = 0.3

    def lrelu(t):
        return t if t > 0 else LEAKY_SLOPE * t

    s_star = lrelu(2.0 * x - 1.0)
    gate = 1 / (1 + math.exp(-(-1.5 * lrelu(0.5 * s_star + 0.1) + 0.3)))
    expect = 0.7 * gate * s_star + 0.2 + x
    out = sf(Tensor(np.full((1, 1, 1, 1), x))).item()
    assert out == pytest.approx(expect, abs=1e-14)


def test_spectrum_filter_residual_structure(rng):
    sf = SpectrumFilter(2, rng)
    s = Tensor(rng.standard_normal((1, 2, 3, 3)))
    s_star = T.leaky_relu(sf.pre(s), LEAKY_SLOPE)
    s_dot = sf.post(sf.channel_weights(s_star) * s_star)
    assert np.array_equal(sf(s).data - s.data, (s_dot + s).data - s.data)


def test_spectrum_filter_channel_mismatch(rng):
    with pytest.raises(ValueError, match="channels"):
        SpectrumFilter(3, rng)(Tensor(np.ones((1, 2, 4, 4))))


def test_fsda_identities(rng):
    fsda = FSDA(3, rng).zero_()
    z = rng.standard_normal((2, 3, 8, 6))
    assert np.max(np.abs(fsda(Tensor(z)).data - z)) < 1e-6
    assert fsda(Tensor(z)).shape == z.shape


def test_fsda_of_zero_is_zero_with_zero_filters(rng):
    fsda = FSDA(2, rng).zero_()
    assert np.array_equal(fsda(Tensor(np.zeros((1, 2, 8, 8)))).data, np.zeros((1, 2, 8, 8)))


def test_fdp_identities(rng):
    fdp = FDP(4, rng)
    for proj in (fdp.q, fdp.k, fdp.v):
        proj.zero_()
    z = rng.standard_normal((1, 4, 8, 8))
    ln = T.layer_norm(Tensor(z)).data
    for t in fdp(Tensor(z)):
        assert np.max(np.abs(t.data - ln)) < 1e-6
    for t in fdp(Tensor(np.full((1, 4, 8, 8), 2.0))):
        assert np.max(np.abs(t.data)) < 1e-9
    q, k, _ = FDP(4, rng)(Tensor(z))
    assert not np.allclose(q.data, k.data)


def test_blp_zero_parameters_is_identity(rng):
    blp = BLP(2, rng).zero_()
    z = rng.standard_normal((1, 2, 8, 8))
    out = blp(Tensor(z))
    assert out.shape == z.shape and np.array_equal(out.data, z)


def test_bnm_zero_fusion_is_identity(rng):
    bnm = BNM(3, rng)
    bnm.fuse.zero_()
    z = rng.standard_normal((1, 3, 8, 8))
    assert np.array_equal(bnm(Tensor(z)).data, z)


def test_bnm_hand_trace(rng):
    bnm = BNM(1, rng)
    bnm.fsda.zero_()  # frequency branch becomes the identity
    z = np.array([[0.2, -0.4], [0.6, 0.1]])
    k1 = np.zeros((3, 3)); k1[1, 1] = 0.5; k1[1, 2] = 0.1
    k2 = np.zeros((3, 3)); k2[1, 1] = -0.3
    kf = np.zeros((2, 3, 3)); kf[0, 1, 1] = 0.2; kf[1, 0, 1] = 0.4
    bnm.conv1.weight.data[...] = k1; bnm.conv1.bias.data[...] = 0.05
    bnm.conv2.weight.data[...] = k2; bnm.conv2.bias.data[...] = 0.0
    bnm.fuse.weight.data[...] = kf; bnm.fuse.bias.data[...] = -0.1

    # conv1: 0.5*z + 0.1*right neighbour + 0.05; lrelu; conv2: -0.3*centre
    right = np.array([[-0.4, 0.0], [0.1, 0.0]])
    h = 0.5 * z + 0.1 * right + 0.05
    h = np.where(h > 0, h, LEAKY_SLOPE * h)
    spatial = -0.3 * h + z
    above = np.array([[0.0, 0.0], spatial[0]])  # fuse tap (0, 1) reads the row above
    expect = 0.2 * z + 0.4 * above - 0.1 + z
    assert np.max(np.abs(bnm(Tensor(z.reshape(1, 1, 2, 2))).data[0, 0] - expect)) < 1e-12


def test_sfii_zero_block_identity_and_sanity(rng):
    z = rng.uniform(-10, 10, (1, 4, 8, 8))
    assert np.array_equal(SFII(4, rng).zero_()(Tensor(z)).data, z)
    a = SFII(4, np.random.default_rng(7))(Tensor(z)).data
    b = SFII(4, np.random.default_rng(7))(Tensor(z)).data
    assert np.isfinite(a).all() and np.array_equal(a, b)


@pytest.mark.parametrize("flags", [dict(fdp=False), dict(local_perception=False),
                                   dict(bnm_frequency=False), dict(bnm_spatial=False)])
def test_ablation_variants_run(rng, flags):
    out = SFII(4, rng, **flags)(Tensor(rng.standard_normal((1, 4, 8, 8))))
    assert out.shape == (1, 4, 8, 8)
