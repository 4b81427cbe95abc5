import numpy as np
import pytest

from sfsnid.network import N_SCALES, NetworkConfig, SFSNiD, build_pyramid
from sfsnid.nn import Conv2d, count_params
from sfsnid.tensor import Tensor

TINY = NetworkConfig(base_channels=4, sfii_blocks_per_stage=1)


def test_pyramid_shapes_and_constant(rng):
    pyr = build_pyramid(Tensor(np.full((1, 3, 64, 64), 0.4)))
    assert [lvl.shape[-2:] for lvl in pyr.levels] == [(64, 64), (32, 32), (16, 16)]
    for lvl in pyr.levels:
        assert np.allclose(lvl.data, 0.4)


def test_pyramid_checkerboard_hand_mean():
    board = (np.indices((4, 4)).sum(axis=0) % 2).astype(float)
    pyr = build_pyramid(Tensor(np.broadcast_to(board, (1, 3, 4, 4)).copy()))
    assert np.array_equal(pyr[1].data, np.full((1, 3, 2, 2), 0.5))


def test_pyramid_rejects_bad_input():
    with pytest.raises(ValueError, match="divisible by 4"):
        build_pyramid(Tensor(np.zeros((1, 3, 10, 12))))
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        build_pyramid(Tensor(np.full((1, 3, 8, 8), 1.5)))


def test_prediction_shapes(rng):
    net = SFSNiD(TINY, seed=0)
    preds = net(build_pyramid(Tensor(rng.uniform(0, 1, (2, 3, 16, 32)))))
    assert len(preds) == N_SCALES
    assert [p.shape for p in preds] == [(2, 3, 16, 32), (2, 3, 8, 16), (2, 3, 4, 8)]


def test_zeroed_output_conv_short_circuit(rng):
    net = SFSNiD(TINY, seed=0)
    b = np.array([0.1, 0.5, 0.9])
    for scale in net.scales:
        scale.conv_out.weight.data[...] = 0.0
        scale.conv_out.bias.data[...] = b
    for p in net(build_pyramid(Tensor(rng.uniform(0, 1, (1, 3, 16, 16))))):
        assert np.array_equal(p.data, np.broadcast_to(b[None, :, None, None], p.shape))


def test_size_must_match_depth_multiple(rng):
    net = SFSNiD(TINY, seed=0)
    with pytest.raises(ValueError, match="multiple of 16"):
        net(build_pyramid(Tensor(rng.uniform(0, 1, (1, 3, 20, 16)))))


def test_same_seed_same_weights():
    a, b = SFSNiD(TINY, seed=3), SFSNiD(TINY, seed=3)
    sa, sb = a.state_dict(), b.state_dict()
    assert sa.keys() == sb.keys() and all(np.array_equal(sa[k], sb[k]) for k in sa)
    c = SFSNiD(TINY, seed=4).state_dict()
    assert any(not np.array_equal(sa[k], c[k]) for k in sa)


def test_state_dict_round_trip_and_errors():
    a, b = SFSNiD(TINY, seed=1), SFSNiD(TINY, seed=2)
    b.load_state_dict(a.state_dict())
    assert all(np.array_equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))
    state = a.state_dict()
    name = next(iter(state))
    state[name] = np.zeros((1,))
    with pytest.raises(ValueError, match=name.replace(".", r"\.")):
        b.load_state_dict(state)
    del state[name]
    with pytest.raises(KeyError):
        b.load_state_dict(state)


def test_param_counts(rng):
    assert count_params(Conv2d(3, 3, 1, rng)) == 12
    assert count_params([]) == 0
    small = SFSNiD(TINY).num_params()
    big = SFSNiD(NetworkConfig(base_channels=8, sfii_blocks_per_stage=1)).num_params()
    assert big > 2 * small


def test_config_validation():
    with pytest.raises(ValueError):
        NetworkConfig(base_channels=2)
    with pytest.raises(ValueError):
        NetworkConfig(sfii_blocks_per_stage=0)
    assert NetworkConfig(depth=2).size_multiple == 16


def test_ablated_network_runs(rng):
    cfg = NetworkConfig(base_channels=4, sfii_blocks_per_stage=1, fdp=False, bnm_frequency=False)
    preds = SFSNiD(cfg)(build_pyramid(Tensor(rng.uniform(0, 1, (1, 3, 16, 16)))))
    assert preds[0].shape == (1, 3, 16, 16)
