"""Convolution, batch norm, LSTM cell and linear layers against oracles."""

import numpy as np
import pytest

from ganvo.engine import Tensor, batch_norm, conv2d, conv_transpose2d, linear, lstm_cell
from ganvo.engine.functional import RunningStats
from ganvo.engine.gradcheck import max_relative_error
from ganvo.errors import ShapeError


def conv2d_loops(x, w, stride, padding):
    """Direct nested-loop cross-correlation, the trusted reference."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for b in range(n):
        for oc in range(o):
            for ic in range(c):
                for y in range(oh):
                    for xo in range(ow):
                        patch = xp[b, ic, y * stride : y * stride + kh, xo * stride : xo * stride + kw]
                        out[b, oc, y, xo] += np.sum(patch * w[oc, ic])
    return out


def conv_transpose2d_loops(x, w, stride, padding):
    """Scatter-accumulate reference for the fractionally-strided conv."""
    n, ci, h, wd = x.shape
    _, co, kh, kw = w.shape
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (wd - 1) * stride - 2 * padding + kw
    padded = np.zeros((n, co, oh + 2 * padding, ow + 2 * padding))
    for b in range(n):
        for ic in range(ci):
            for y in range(h):
                for xo in range(wd):
                    padded[b, :, y * stride : y * stride + kh, xo * stride : xo * stride + kw] += (
                        x[b, ic, y, xo] * w[ic]
                    )
    hp, wp = padded.shape[2], padded.shape[3]
    return padded[:, :, padding : hp - padding if padding else hp, padding : wp - padding if padding else wp]


# -- conv2d -----------------------------------------------------------------


def test_conv2d_identity_kernel():
    x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
    w = Tensor(np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(conv2d(x, w).data, x.data)


def test_conv2d_all_ones_sums_window():
    x = Tensor(np.ones((1, 1, 3, 3)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    out = conv2d(x, w)
    assert out.shape == (1, 1, 1, 1)
    assert out.item() == 9.0


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 0), (1, 1), (2, 1)])
def test_conv2d_matches_loop_oracle(stride, padding):
    rng = np.random.default_rng(11)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    out = conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding)
    np.testing.assert_allclose(out.data, conv2d_loops(x, w, stride, padding), atol=1e-12)


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))


def test_conv2d_rejects_empty_output():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1)])
def test_conv2d_gradcheck(stride, padding):
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((2, 2, 5, 5)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)

    def f():
        out = conv2d(x, w, stride=stride, padding=padding)
        return (out * out).sum()

    assert max_relative_error(f, [x, w], rng=rng) < 1e-4


# -- conv_transpose2d ---------------------------------------------------------


def test_conv_transpose2d_delta_reproduces_kernel():
    x = Tensor(np.ones((1, 1, 1, 1)))
    w = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    out = conv_transpose2d(x, w)
    np.testing.assert_array_equal(out.data, w.data.reshape(1, 1, 2, 2))


def test_conv_transpose2d_stride2_matches_scatter_oracle():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((1, 1, 2, 2))
    w = rng.standard_normal((1, 1, 2, 2))
    out = conv_transpose2d(Tensor(x), Tensor(w), stride=2)
    assert out.shape == (1, 1, 4, 4)
    np.testing.assert_allclose(out.data, conv_transpose2d_loops(x, w, 2, 0), atol=1e-12)


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 0), (2, 1), (3, 1)])
def test_conv_transpose2d_matches_scatter_oracle(stride, padding):
    rng = np.random.default_rng(17)
    x = rng.standard_normal((2, 3, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    out = conv_transpose2d(Tensor(x), Tensor(w), stride=stride, padding=padding)
    np.testing.assert_allclose(out.data, conv_transpose2d_loops(x, w, stride, padding), atol=1e-12)


@pytest.mark.parametrize("stride,padding,hw", [(1, 0, 5), (2, 0, 5), (2, 1, 5), (1, 1, 4)])
def test_conv_transpose_is_adjoint_of_conv(stride, padding, hw):
    rng = np.random.default_rng(19)
    x = rng.standard_normal((2, 2, hw, hw))
    w = rng.standard_normal((3, 2, 3, 3))
    y_shape = conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding).shape
    y = rng.standard_normal(y_shape)
    lhs = np.vdot(conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding).data, y)
    rhs = np.vdot(x, conv_transpose2d(Tensor(y), Tensor(w), stride=stride, padding=padding).data)
    assert abs(lhs - rhs) < 1e-10


def test_conv_transpose2d_gradcheck():
    rng = np.random.default_rng(23)
    x = Tensor(rng.standard_normal((1, 3, 3, 3)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 2, 4, 4)), requires_grad=True)

    def f():
        out = conv_transpose2d(x, w, stride=2, padding=1)
        return (out * out).sum()

    assert max_relative_error(f, [x, w], rng=rng) < 1e-4


# -- batch_norm ----------------------------------------------------------------


def test_batch_norm_normalizes_to_unit_stats():
    rng = np.random.default_rng(29)
    x = Tensor(rng.standard_normal((4, 3, 5, 5)) * 3.0 + 2.0)
    running = RunningStats(3)
    out = batch_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), running, training=True)
    mu = out.data.mean(axis=(0, 2, 3))
    sd = out.data.std(axis=(0, 2, 3))
    assert np.all(np.abs(mu) < 1e-10)
    assert np.all(np.abs(sd - 1.0) < 1e-6)


def test_batch_norm_affine_targets_gamma_beta():
    rng = np.random.default_rng(31)
    x = Tensor(rng.standard_normal((4, 2, 4, 4)))
    running = RunningStats(2)
    out = batch_norm(x, Tensor([2.0, 0.5]), Tensor([3.0, -1.0]), running, training=True)
    np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), [3.0, -1.0], atol=1e-10)
    np.testing.assert_allclose(out.data.std(axis=(0, 2, 3)), [2.0, 0.5], atol=1e-6)


def test_batch_norm_constant_channel_yields_beta():
    x = Tensor(np.full((3, 2, 4, 4), 7.0))
    running = RunningStats(2)
    out = batch_norm(x, Tensor(np.ones(2)), Tensor([0.25, -0.5]), running, training=True)
    np.testing.assert_allclose(out.data[:, 0], 0.25, atol=1e-12)
    np.testing.assert_allclose(out.data[:, 1], -0.5, atol=1e-12)


def test_batch_norm_eval_uses_running_stats():
    running = RunningStats(1)
    running.mean = np.array([2.0])
    running.var = np.array([4.0])
    x = Tensor(np.full((1, 1, 2, 2), 6.0))
    out = batch_norm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), running, training=False)
    np.testing.assert_allclose(out.data, 2.0, atol=1e-7)
    # eval mode must leave the buffers untouched
    assert running.mean[0] == 2.0 and running.var[0] == 4.0


def test_batch_norm_updates_running_stats_with_momentum():
    rng = np.random.default_rng(37)
    x = rng.standard_normal((8, 2, 3, 3)) + 5.0
    running = RunningStats(2)
    batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), running, training=True, momentum=0.1)
    mu = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    np.testing.assert_allclose(running.mean, 0.9 * 0.0 + 0.1 * mu, atol=1e-12)
    np.testing.assert_allclose(running.var, 0.9 * 1.0 + 0.1 * var, atol=1e-12)


def test_batch_norm_rejects_bad_params():
    running = RunningStats(3)
    with pytest.raises(ShapeError):
        batch_norm(Tensor(np.ones((2, 3, 2, 2))), Tensor(np.ones(2)), Tensor(np.zeros(3)), running, True)
    with pytest.raises(ShapeError):
        batch_norm(Tensor(np.ones((2, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3)), running, True)


def test_batch_norm_gradcheck():
    rng = np.random.default_rng(41)
    x = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
    gamma = Tensor(np.array([1.5, 0.7]), requires_grad=True)
    beta = Tensor(np.array([0.1, -0.2]), requires_grad=True)
    # random projection: sum(out^2) is nearly x-independent under batch
    # normalization, which would starve the check of signal
    probe = Tensor(rng.standard_normal((3, 2, 3, 3)))

    def f():
        running = RunningStats(2)
        out = batch_norm(x, gamma, beta, running, training=True)
        return (out * probe).sum()

    assert max_relative_error(f, [x, gamma, beta], rng=rng) < 1e-4


# -- lstm_cell ------------------------------------------------------------------


def _zero_lstm(in_dim, hidden):
    return (
        Tensor(np.zeros((in_dim, 4 * hidden))),
        Tensor(np.zeros((hidden, 4 * hidden))),
        Tensor(np.zeros(4 * hidden)),
    )


def test_lstm_cell_all_zero_is_fixed_point():
    w_x, w_h, b = _zero_lstm(3, 4)
    h, c = lstm_cell(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))), w_x, w_h, b)
    np.testing.assert_array_equal(h.data, 0.0)
    np.testing.assert_array_equal(c.data, 0.0)


def test_lstm_cell_saturated_forget_gate_preserves_cell():
    hidden = 3
    w_x, w_h, bias = _zero_lstm(2, hidden)
    b = bias.data.copy()
    b[hidden : 2 * hidden] = 100.0  # forget gate hard open
    c_prev = np.array([[0.3, -0.7, 1.2]])
    _, c = lstm_cell(
        Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, hidden))), Tensor(c_prev), w_x, w_h, Tensor(b)
    )
    np.testing.assert_allclose(c.data, c_prev, atol=1e-9)


def test_lstm_cell_rejects_mismatched_sizes():
    w_x, w_h, b = _zero_lstm(2, 3)
    with pytest.raises(ShapeError):
        lstm_cell(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4))), w_x, w_h, b)


def test_lstm_chain_gradcheck_all_weights():
    rng = np.random.default_rng(43)
    in_dim, hidden = 3, 4
    w_x = Tensor(rng.standard_normal((in_dim, 4 * hidden)) * 0.5, requires_grad=True)
    w_h = Tensor(rng.standard_normal((hidden, 4 * hidden)) * 0.5, requires_grad=True)
    bias = Tensor(rng.standard_normal(4 * hidden) * 0.5, requires_grad=True)
    xs = [Tensor(rng.standard_normal((2, in_dim))) for _ in range(3)]
    h0 = Tensor(rng.standard_normal((2, hidden)) * 0.1, requires_grad=True)
    c0 = Tensor(rng.standard_normal((2, hidden)) * 0.1, requires_grad=True)

    def f():
        h, c = h0, c0
        for x in xs:
            h, c = lstm_cell(x, h, c, w_x, w_h, bias)
        return (h * h).sum() + c.sum()

    assert max_relative_error(f, [w_x, w_h, bias, h0, c0], rng=rng) < 1e-4


# -- linear ------------------------------------------------------------------------


def test_linear_identity():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    out = linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, x.data)


def test_linear_known_product():
    out = linear(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.item() == 11.0


def test_linear_gradcheck():
    rng = np.random.default_rng(47)
    x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    b = Tensor(rng.standard_normal(2), requires_grad=True)

    def f():
        return (linear(x, w, b) ** 2).sum()

    assert max_relative_error(f, [x, w, b], rng=rng) < 1e-4
