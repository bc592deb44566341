import math
import warnings

import numpy as np
import pytest

from gradcases import CASES
from oracles import conv2d_same_oracle
from seqpad.tensorcore import (Adam, AdamState, GraphError, NonFiniteGradient, Tensor, adam_step, backward,
                               check_gradients, ops)
from seqpad.tensorcore.ops import ShapeError


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradient_matches_finite_differences(name):
    worst = max(check_gradients(*CASES[name](np.random.default_rng(seed))) for seed in range(20))
    assert worst < 1e-4


def test_softmax_symmetric():
    np.testing.assert_allclose(ops.softmax(Tensor(np.zeros((1, 2)))).data, [[0.5, 0.5]])


def test_softmax_normalized(rng):
    s = ops.softmax(Tensor(rng.normal(0, 10, (50, 2)))).data
    assert np.all(np.abs(s.sum(axis=1) - 1) < 1e-12)
    assert np.all((s > 0) & (s < 1))


def test_identity_depthwise(rng):
    x = rng.normal(size=(2, 5, 7, 3))
    w = np.zeros((3, 3, 3))
    w[1, 1] = 1.0
    np.testing.assert_array_equal(ops.depthwise_conv2d(Tensor(x), Tensor(w)).data, x)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_matches_loop_oracle(rng, stride):
    x = rng.normal(size=(1, 5, 5, 2))
    w = rng.normal(size=(3, 3, 2, 3))
    np.testing.assert_allclose(ops.conv2d(Tensor(x), Tensor(w), stride=stride).data,
                               conv2d_same_oracle(x, w, stride), atol=1e-12, rtol=0)


def test_depthwise_matches_per_channel_conv(rng):
    x = rng.normal(size=(2, 6, 6, 3))
    w = rng.normal(size=(3, 3, 3))
    out = ops.depthwise_conv2d(Tensor(x), Tensor(w), stride=2).data
    for c in range(3):
        ref = conv2d_same_oracle(x[..., c:c + 1], w[..., c][..., None, None], 2)
        np.testing.assert_allclose(out[..., c:c + 1], ref, atol=1e-12)


def test_conv_shape_mismatch():
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((1, 4, 4, 2))), Tensor(np.zeros((3, 3, 3, 1))))


def test_sum_grad_is_ones(rng):
    w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    ops.sum(w).backward()
    np.testing.assert_array_equal(w.grad, np.ones((3, 4)))


def test_relu_grad():
    x = Tensor(np.array([-2.0, -1e-9, 0.0, 3.0]), requires_grad=True)
    ops.sum(ops.relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [0, 0, 0, 1])


def test_second_backward_is_error(rng):
    w = Tensor(rng.normal(size=3), requires_grad=True)
    loss = ops.sum(ops.mul(w, w))
    loss.backward()
    with pytest.raises(GraphError):
        loss.backward()


def test_non_scalar_loss(rng):
    w = Tensor(rng.normal(size=3), requires_grad=True)
    with pytest.raises(GraphError):
        ops.mul(w, 2.0).backward()


def test_disconnected_param_warns(rng):
    a = Tensor(rng.normal(size=3), requires_grad=True)
    b = Tensor(rng.normal(size=2), requires_grad=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        backward(ops.sum(a), params=[a, b])
    assert any("disconnected" in str(w.message) or "not connected" in str(w.message) for w in caught)
    np.testing.assert_array_equal(b.grad, np.zeros(2))


def test_shared_input_accumulates(rng):
    x = Tensor(rng.normal(size=4), requires_grad=True)
    ops.sum(ops.add(ops.mul(x, x), x)).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_batch_norm_train_statistics(rng):
    x = rng.normal(3.0, 5.0, (8, 4, 4, 3))
    out = ops.batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)),
                         np.zeros(3), np.ones(3), training=True, eps=0.0).data.reshape(-1, 3)
    assert np.all(np.abs(out.mean(axis=0)) < 1e-6)
    assert np.all(np.abs(out.var(axis=0) - 1) < 1e-6)


def test_batch_norm_eval_is_affine(rng):
    rm, rv = rng.normal(size=2), rng.uniform(0.5, 2, 2)
    g, b = rng.normal(size=2), rng.normal(size=2)
    x = rng.normal(size=(5, 3, 3, 2))
    out = ops.batch_norm(Tensor(x), Tensor(g), Tensor(b), rm.copy(), rv.copy(), training=False).data
    np.testing.assert_allclose(out, (x - rm) / np.sqrt(rv + 1e-5) * g + b, atol=1e-12)
    again = ops.batch_norm(Tensor(x), Tensor(g), Tensor(b), rm.copy(), rv.copy(), training=False).data
    np.testing.assert_array_equal(out, again)


def test_batch_norm_running_update(rng):
    x = rng.normal(2.0, 3.0, (10, 2))
    rm, rv = np.zeros(2), np.ones(2)
    ops.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, training=True)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=0))


def test_dropout_eval_identity(rng):
    x = Tensor(rng.normal(size=(10, 10)))
    assert ops.dropout(x, 0.5, training=False) is x


def test_dropout_train_statistics(rng):
    n, rate = 100_000, 0.25
    out = ops.dropout(Tensor(np.ones(n)), rate, True, rng).data
    zeros = (out == 0).mean()
    assert abs(zeros - rate) < 4 * math.sqrt(rate * (1 - rate) / n)
    np.testing.assert_allclose(out[out != 0], 1 / (1 - rate))


@pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
def test_dropout_rate_bounds(rate):
    with pytest.raises(ValueError):
        ops.dropout(Tensor(np.ones(3)), rate, True, np.random.default_rng(0))


def test_bce_shape_mismatch():
    with pytest.raises(ShapeError):
        ops.bce_loss(Tensor(np.full((2, 2), 0.5)), np.zeros((3, 2)))


def test_lstm_cell_gate_order():
    # input gate saturated open, forget closed, candidate = tanh(big) ~ 1, output open
    u = 1
    b = np.array([50.0, -50.0, 50.0, 50.0])
    h, c = ops.lstm_cell(Tensor(np.zeros((1, 1))), Tensor(np.zeros((1, u))), Tensor(np.full((1, u), 7.0)),
                         Tensor(np.zeros((1, 4))), Tensor(np.zeros((u, 4))), Tensor(b))
    np.testing.assert_allclose(c.data, [[1.0]], atol=1e-12)
    np.testing.assert_allclose(h.data, [[np.tanh(1.0)]], atol=1e-12)


def test_determinism(rng):
    fn, inputs = CASES["bidirectional_wrap"](np.random.default_rng(3))
    fn2, inputs2 = CASES["bidirectional_wrap"](np.random.default_rng(3))
    a, b = fn(), fn2()
    a.backward()
    b.backward()
    assert a.data == b.data
    for x, y in zip(inputs, inputs2):
        np.testing.assert_array_equal(x.grad, y.grad)


def test_adam_zero_gradient():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    st = adam_step({"p": p}, AdamState())
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert st.t == 1


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([1.0, 1.0, 1.0]), requires_grad=True)
    p.grad = np.array([3.0, -0.5, 1e-2])
    adam_step({"p": p}, AdamState())
    np.testing.assert_allclose(p.data - 1.0, [-0.001, 0.001, -0.001], rtol=1e-5)


def test_adam_descends_quadratic():
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam({"w": w})
    prev = abs(w.data[0])
    for _ in range(10):
        opt.zero_grad()
        ops.sum(ops.mul(w, w)).backward()
        opt.step()
        assert abs(w.data[0]) < prev
        prev = abs(w.data[0])


def test_adam_non_finite_names_parameter():
    p = Tensor(np.ones(2), requires_grad=True)
    p.grad = np.array([np.nan, 0.0])
    with pytest.raises(NonFiniteGradient, match="stem.w"):
        adam_step({"stem.w": p}, AdamState())


def test_float32_stays_float32(rng):
    x = Tensor(rng.normal(size=(2, 4, 4, 3)).astype(np.float32))
    w = Tensor(rng.normal(size=(3, 3, 3, 2)).astype(np.float32), requires_grad=True)
    y = ops.relu(ops.add(ops.mul(ops.conv2d(x, w), 0.5), 1.0))
    assert y.data.dtype == np.float32
    ops.sum(y).backward()
    assert w.grad.dtype == np.float32
