import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfsnid import tensor as T
from sfsnid.tensor import Tensor


def conv_loops(x, w, b, stride):
    """Zero-padded 'same' cross-correlation written as plain loops."""
    bsz, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    ho, wo = (h + 2 * p - k) // stride + 1, (wd + 2 * p - k) // stride + 1
    out = np.zeros((bsz, cout, ho, wo))
    for n in range(bsz):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[n, :, i * stride : i * stride + k, j * stride : j * stride + k]
                    out[n, o, i, j] = np.sum(patch * w[o]) + (0 if b is None else b[o])
    return out


def test_sum_gradient_is_ones(rng):
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_square_gradient_is_2x(rng):
    a = rng.standard_normal((3, 4))
    x = Tensor(a, requires_grad=True)
    (x * x).sum().backward()
    assert np.allclose(x.grad, 2 * a, atol=0, rtol=1e-15)


def test_unused_leaf_gets_zero_grad(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    y = Tensor(rng.standard_normal(3), requires_grad=True)
    x.sum().backward()
    assert np.array_equal(y.grad, np.zeros(3))


def test_second_backward_raises(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    with pytest.raises(RuntimeError, match="already consumed"):
        loss.backward()


def test_backward_needs_scalar(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_no_grad_records_nothing(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    with T.no_grad():
        y = (x * x).sum()
    assert y._node is None and not y.requires_grad


def test_shared_subexpression_accumulates(rng):
    a = rng.standard_normal(4)
    x = Tensor(a, requires_grad=True)
    y = x * 3.0
    (y * y + y).sum().backward()
    assert np.allclose(x.grad, 18 * a + 3)


def test_nonfinite_output_raises():
    with pytest.raises(FloatingPointError, match="div"):
        T.div(Tensor([1.0]), Tensor([0.0]))


def test_power_rejects_negative_base_fractional_exponent():
    with pytest.raises(ValueError):
        T.power(Tensor([-0.5, 0.2]), 1.3)
    assert np.allclose(T.power(Tensor([-2.0]), 2.0).data, 4.0)


def test_power_scalar_oracle():
    assert T.power(Tensor([0.25]), 1.3).item() == pytest.approx(math.pow(0.25, 1.3), abs=1e-15)


def test_matmul_identity(rng):
    a = rng.standard_normal((4, 5))
    assert np.array_equal(T.matmul(Tensor(a), Tensor(np.eye(5))).data, a)


def test_matmul_shape_error():
    with pytest.raises(ValueError, match="not aligned"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_concat_channel_shapes_add(rng):
    out = T.concat([Tensor(rng.standard_normal((2, 3, 4, 4))), Tensor(rng.standard_normal((2, 5, 4, 4)))], axis=1)
    assert out.shape == (2, 8, 4, 4)
    with pytest.raises(ValueError, match="operand 1"):
        T.concat([Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 2, 3, 4)))], axis=1)


def test_conv_identity_1x1(rng):
    x = rng.standard_normal((2, 3, 5, 7))
    w = np.eye(3).reshape(3, 3, 1, 1)
    assert np.array_equal(T.conv2d(Tensor(x), Tensor(w)).data, x)


def test_conv_center_hand_sum():
    out = T.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
    assert out.data[0, 0, 1, 1] == 9.0
    assert out.data[0, 0, 0, 0] == 4.0


@pytest.mark.parametrize("k,stride,shape", [(3, 1, (2, 3, 6, 5)), (3, 2, (1, 2, 7, 8)), (1, 1, (2, 4, 3, 3))])
def test_conv_matches_loops(rng, k, stride, shape):
    x = rng.standard_normal(shape)
    w = rng.standard_normal((3, shape[1], k, k))
    b = rng.standard_normal(3)
    got = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride).data
    assert np.allclose(got, conv_loops(x, w, b, stride), atol=1e-12)


def test_conv_shape_error_names_operand():
    with pytest.raises(ValueError, match="weight"):
        T.conv2d(Tensor(np.ones((1, 3, 4, 4))), Tensor(np.ones((2, 2, 3, 3))))


def test_activations_scalars():
    assert T.sigmoid(Tensor([0.0])).item() == 0.5
    assert T.leaky_relu(Tensor([-1.0]), 0.01).item() == pytest.approx(-0.01)
    sm = T.softmax(Tensor(np.full((2, 5), 3.7)), axis=-1).data
    assert np.allclose(sm, 0.2)


def test_softmax_rows_sum_to_one(rng):
    s = T.softmax(Tensor(rng.standard_normal((4, 7)) * 30), axis=-1).data
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-12)


def test_global_avg_pool():
    x = np.arange(4.0).reshape(1, 1, 2, 2)
    assert T.global_avg_pool(Tensor(x)).item() == 1.5
    assert np.all(T.global_avg_pool(Tensor(np.full((1, 2, 3, 3), 0.7))).data == pytest.approx(0.7))


def test_layer_norm_constant_and_pair():
    assert np.allclose(T.layer_norm(Tensor(np.full((1, 4, 2, 2), 3.0))).data, 0.0)
    x = np.array([1.0, 3.0]).reshape(1, 2, 1, 1)
    got = T.layer_norm(Tensor(x), eps=1e-5).data.ravel()
    expect = np.array([-1.0, 1.0]) / math.sqrt(1.0 + 1e-5)
    assert np.allclose(got, expect, atol=1e-12)


def test_layer_norm_token_statistics(rng):
    x = rng.standard_normal((2, 6, 3, 4)) * 5 + 2
    y = T.layer_norm(Tensor(x)).data
    assert np.allclose(y.mean(axis=1), 0, atol=1e-6)
    assert np.allclose(y.var(axis=1), 1, atol=1e-5)


def test_up_down_sampling():
    x = np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2)
    up = T.upsample2x(Tensor(x)).data
    assert up.shape == (1, 1, 4, 4) and np.array_equal(up[0, 0, :2, :2], np.zeros((2, 2)))
    assert np.array_equal(T.downsample2x(Tensor(up)).data, x)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 9), before=st.integers(0, 12), after=st.integers(0, 12))
def test_reflect_indices_match_numpy(n, before, after):
    src = np.arange(n)
    expect = np.pad(src, (before, after), mode="reflect") if n > 1 else np.zeros(n + before + after, int)
    assert np.array_equal(src[T.reflect_indices(n, before, after)], expect)


def test_getitem_advanced_index_accumulates():
    x = Tensor(np.zeros(4), requires_grad=True)
    x[np.array([1, 1, 3])].sum().backward()
    assert np.array_equal(x.grad, [0, 2, 0, 1])


def test_float32_mode():
    T.set_default_dtype(np.float32)
    assert Tensor([1.0]).dtype == np.float32
    with pytest.raises(ValueError):
        T.set_default_dtype(np.int32)


@settings(max_examples=30, deadline=None)
@given(shape=st.tuples(st.integers(1, 4), st.integers(1, 5)), seed=st.integers(0, 2**16))
def test_broadcast_add_gradient_shapes(shape, seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.standard_normal(shape), requires_grad=True)
    b = Tensor(rng.standard_normal((1, shape[1])), requires_grad=True)
    (a + b).sum().backward()
    assert a.grad.shape == shape and np.allclose(b.grad, shape[0])
