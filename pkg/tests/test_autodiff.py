import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdrobust.autodiff import (
    AdamState,
    ContractError,
    DimensionError,
    Tape,
    Tensor,
    adam_step,
    backward,
    checkpoint,
    glorot_uniform,
    ops,
)

from conftest import numeric_grad, rel_error


def direct_conv(x, w, b, stride, padding):
    """Quadruple-loop cross-correlation oracle."""
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = b[o]
                for c in range(c_in):
                    for u in range(k):
                        for v in range(k):
                            acc += xp[c, i * stride + u, j * stride + v] * w[o, c, u, v]
                out[o, i, j] = acc
    return out


# -- conv2d ------------------------------------------------------------------------


def test_conv_identity_kernel():
    x = Tensor(np.ones((1, 3, 3)))
    y = ops.conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(np.round(y.data, 12), np.ones((1, 3, 3)))


def test_conv_same_padding_size():
    y = ops.conv2d(Tensor(np.ones((1, 5, 5))), Tensor(np.ones((1, 1, 9, 9))), Tensor(np.zeros(1)), 1, 4)
    assert y.shape == (1, 5, 5)


def test_conv_matches_direct_oracle(rng):
    x = rng.normal(size=(2, 8, 8))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    y = ops.conv2d(Tensor(x), Tensor(w), Tensor(b))
    assert np.max(np.abs(y.data - direct_conv(x, w, b, 1, 0))) < 1e-10


@settings(max_examples=12, deadline=None)
@given(
    c_in=st.integers(1, 4),
    c_out=st.integers(1, 4),
    size=st.integers(5, 16),
    k=st.sampled_from([1, 3, 5]),
    stride=st.integers(1, 2),
    padding=st.integers(0, 2),
    seed=st.integers(0, 10_000),
)
def test_conv_oracle_random_shapes(c_in, c_out, size, k, stride, padding, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(c_in, size, size))
    w = r.normal(size=(c_out, c_in, k, k))
    b = r.normal(size=c_out)
    y = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding)
    assert np.max(np.abs(y.data - direct_conv(x, w, b, stride, padding))) < 1e-10


def test_conv_batched_equals_per_sample(rng):
    x = rng.normal(size=(3, 2, 10, 10))
    w, b = Tensor(rng.normal(size=(4, 2, 3, 3))), Tensor(rng.normal(size=4))
    batched = ops.conv2d(Tensor(x), w, b, 1, 1).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], ops.conv2d(Tensor(x[i]), w, b, 1, 1).data, atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        ops.conv2d(Tensor(np.ones((2, 5, 5))), Tensor(np.ones((1, 3, 3, 3))), Tensor(np.zeros(1)))


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 2), (2, 1)])
def test_conv_gradients(rng, stride, padding):
    x = rng.normal(size=(2, 7, 7))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    proj = rng.normal(size=ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding).shape)

    def loss(xv, wv, bv):
        return float(np.sum(ops.conv2d(Tensor(xv), Tensor(wv), Tensor(bv), stride, padding).data * proj))

    xt, wt, bt = (Tensor(a, requires_grad=True) for a in (x, w, b))
    backward(ops.tsum(ops.mul(ops.conv2d(xt, wt, bt, stride, padding), Tensor(proj))))
    assert rel_error(xt.grad, numeric_grad(lambda v: loss(v, w, b), x)) < 1e-4
    assert rel_error(wt.grad, numeric_grad(lambda v: loss(x, v, b), w)) < 1e-4
    assert rel_error(bt.grad, numeric_grad(lambda v: loss(x, w, v), b)) < 1e-4


# -- leaky_relu --------------------------------------------------------------------


def test_leaky_relu_values():
    np.testing.assert_allclose(ops.leaky_relu(Tensor([1.0, -1.0]), 0.01).data, [1.0, -0.01])


def test_leaky_relu_zero_slope_is_relu(rng):
    x = rng.normal(size=20)
    np.testing.assert_array_equal(ops.leaky_relu(Tensor(x), 0.0).data, np.maximum(x, 0))


def test_leaky_relu_gradient_matches_fd(analytic_grad):
    g = analytic_grad(lambda t: ops.leaky_relu(t, 0.1).sum(), np.array([-2.0]))
    fd = numeric_grad(lambda v: float(ops.leaky_relu(Tensor(v), 0.1).data.sum()), np.array([-2.0]))
    assert abs(g[0] - 0.1) < 1e-12
    assert abs(g[0] - fd[0]) < 1e-6


def test_leaky_relu_gradient_at_zero_is_one(analytic_grad):
    assert analytic_grad(lambda t: ops.leaky_relu(t, 0.2).sum(), np.array([0.0]))[0] == 1.0


# -- max_pool2d --------------------------------------------------------------------


def test_max_pool_basic():
    y = ops.max_pool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2, 2)
    np.testing.assert_array_equal(y.data, [[[4.0]]])


def test_max_pool_constant():
    y = ops.max_pool2d(Tensor(np.full((2, 6, 6), 3.5)), 2)
    assert y.shape == (2, 3, 3) and np.all(y.data == 3.5)


def test_max_pool_window_too_large():
    with pytest.raises(DimensionError):
        ops.max_pool2d(Tensor(np.ones((1, 2, 2))), 3)


@pytest.mark.parametrize("window,stride", [(2, 2), (3, 1), (2, 1)])
def test_max_pool_gradient(rng, window, stride):
    x = rng.normal(size=(1, 6, 6))
    proj = rng.normal(size=ops.max_pool2d(Tensor(x), window, stride).shape)
    g = Tensor(x, requires_grad=True)
    backward(ops.tsum(ops.mul(ops.max_pool2d(g, window, stride), Tensor(proj))))
    fd = numeric_grad(lambda v: float(np.sum(ops.max_pool2d(Tensor(v), window, stride).data * proj)), x)
    assert rel_error(g.grad, fd) < 1e-4


def test_max_pool_routes_to_single_argmax():
    x = Tensor(np.array([[[1.0, 1.0], [1.0, 1.0]]]), requires_grad=True)
    backward(ops.max_pool2d(x, 2).sum())
    assert x.grad.sum() == 1.0 and x.grad[0, 0, 0] == 1.0


# -- dense -------------------------------------------------------------------------


def test_dense_identity_and_bias(rng):
    x = rng.normal(size=4)
    np.testing.assert_allclose(ops.dense(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4))).data, x)
    b = rng.normal(size=3)
    np.testing.assert_allclose(ops.dense(Tensor(x), Tensor(np.zeros((3, 4))), Tensor(b)).data, b)


def test_dense_jacobian_is_weight(rng):
    w, b, x = rng.normal(size=(3, 4)), rng.normal(size=3), rng.normal(size=4)
    jac = np.stack([
        numeric_grad(lambda v, i=i: float(ops.dense(Tensor(v), Tensor(w), Tensor(b)).data[i]), x) for i in range(3)
    ])
    np.testing.assert_allclose(jac, w, atol=1e-8)
    for i in range(3):
        xt = Tensor(x, requires_grad=True)
        out = ops.dense(xt, Tensor(w), Tensor(b))
        backward(ops.tsum(ops.mul(out, Tensor(np.eye(3)[i]))))
        np.testing.assert_allclose(xt.grad, w[i], atol=1e-12)


def test_dense_shape_error():
    with pytest.raises(DimensionError):
        ops.dense(Tensor(np.ones(5)), Tensor(np.ones((3, 4))), Tensor(np.zeros(3)))


# -- softmax cross-entropy ---------------------------------------------------------


def test_cross_entropy_uniform():
    assert abs(float(ops.softmax_cross_entropy(Tensor(np.zeros(6)), 2).data) - math.log(6)) < 1e-12
    assert abs(math.log(6) - 1.791759) < 1e-6


def test_cross_entropy_stable_for_large_logits():
    loss = float(ops.softmax_cross_entropy(Tensor([1000.0, 0, 0, 0, 0, 0]), 0).data)
    assert math.isfinite(loss) and loss < 1e-12


def test_cross_entropy_gradient(rng, analytic_grad):
    z = rng.normal(size=6)
    g = analytic_grad(lambda t: ops.softmax_cross_entropy(t, 4), z)
    fd = numeric_grad(lambda v: float(ops.softmax_cross_entropy(Tensor(v), 4).data), z)
    assert rel_error(g, fd) < 1e-4
    expected = ops.softmax(z) - np.eye(6)[4]
    np.testing.assert_allclose(g, expected, atol=1e-14)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(IndexError):
        ops.softmax_cross_entropy(Tensor(np.zeros(6)), 6)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
def test_softmax_sums_to_one(logits):
    p = ops.softmax(np.array(logits))
    assert abs(p.sum() - 1.0) < 1e-12 and np.all(p > 0)


# -- backward and tape -------------------------------------------------------------


def test_backward_sum_gives_ones(rng):
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_accumulates_reuse():
    x = Tensor([1.5], requires_grad=True)
    y = ops.mul(x, Tensor([1.0]))
    backward(ops.tsum(ops.add(y, y)))
    assert x.grad[0] == 2.0


def test_backward_non_scalar():
    with pytest.raises(ContractError):
        backward(Tensor(np.ones(3), requires_grad=True) * 2.0)


def test_tape_is_topological_and_complete(rng):
    x = Tensor(rng.normal(size=(1, 6, 6)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 1, 3, 3)), requires_grad=True)
    h = ops.leaky_relu(ops.conv2d(x, w, Tensor(np.zeros(2)), 1, 1))
    h2 = ops.add(h, h)
    loss = ops.tsum(ops.max_pool2d(h2, 2))
    tape = Tape.from_root(loss)
    assert tape.is_topological()
    ops_names = [n.op for n in tape.nodes]
    assert ops_names == ["conv2d", "leaky_relu", "add", "max_pool2d", "sum"]
    assert len({id(n) for n in tape.nodes}) == len(tape)


def test_determinism(rng):
    x = rng.normal(size=(2, 2, 12, 12))
    w = rng.normal(size=(3, 2, 5, 5))

    def run():
        xt, wt = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)
        out = ops.conv2d(xt, wt, Tensor(np.zeros(3)), 1, 2)
        backward(ops.tsum(ops.mul(out, out)))
        return out.data.tobytes(), xt.grad.tobytes(), wt.grad.tobytes()

    assert run() == run()


# -- Adam --------------------------------------------------------------------------


def test_adam_zero_gradients_leave_params():
    p = Tensor([1.0, -2.0], requires_grad=True)
    p.grad = np.zeros(2)
    adam_step([p], AdamState())
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_hand_computed():
    p = Tensor([0.5], requires_grad=True)
    p.grad = np.array([1.0])
    state = AdamState()
    adam_step([p], state)
    # m_hat = 1, v_hat = 1 after bias correction
    expected = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8)
    assert abs(p.data[0] - expected) < 1e-15
    assert state.t == 1
    np.testing.assert_array_equal(p.grad, [1.0])


def test_adam_minimizes_quadratic():
    w = Tensor([1.0], requires_grad=True)
    state = AdamState(learning_rate=1e-2)
    losses = []
    for _ in range(100):
        w.grad = None
        loss = ops.tsum(ops.mul(w, w))
        losses.append(float(loss.data))
        backward(loss)
        adam_step([w], state)
    assert abs(w.data[0]) < 0.5
    assert losses[-1] < losses[0]
    assert all(b <= a + 1e-12 for a, b in zip(losses[:50], losses[1:51]))


def test_adam_missing_grad():
    with pytest.raises(ContractError):
        adam_step([Tensor([1.0], requires_grad=True)], AdamState())


def test_adam_step_counter_increases():
    p = Tensor([1.0], requires_grad=True)
    p.grad = np.array([0.3])
    state = AdamState()
    for i in range(1, 4):
        adam_step([p], state)
        assert state.t == i and state.m[0].shape == p.shape


# -- init and checkpoints ----------------------------------------------------------


def test_glorot_bounds_and_seed():
    a = glorot_uniform((8, 2, 9, 9), np.random.default_rng(3))
    b = glorot_uniform((8, 2, 9, 9), np.random.default_rng(3))
    limit = math.sqrt(6 / (2 * 81 + 8 * 81))
    assert np.all(np.abs(a) <= limit) and np.array_equal(a, b)


def test_checkpoint_round_trip_bit_exact(rng):
    params = {"conv0.weight": rng.normal(size=(4, 2, 9, 9)), "head.out.bias": rng.normal(size=6),
              "scalar": np.array(np.pi)}
    blob = checkpoint.dumps(params)
    assert blob[:4] == b"MDCK"
    assert struct.unpack_from("<II", blob, 4) == (1, 3)
    back = checkpoint.loads(blob)
    assert list(back) == list(params)
    for k in params:
        assert back[k].tobytes() == np.asarray(params[k], dtype="<f8").tobytes()
        assert back[k].shape == np.shape(params[k])


def test_checkpoint_rejects_garbage():
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"XXXX" + bytes(8))
    blob = checkpoint.dumps({"a": np.ones(3)})
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(blob[:-4])
