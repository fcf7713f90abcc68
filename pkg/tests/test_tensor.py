"""Core tensor ops: forward values, backward gradients, graph rules."""

import numpy as np
import pytest

from ganvo.engine import Tensor, no_grad
from ganvo.engine.gradcheck import max_relative_error
from ganvo.errors import NumericError, ShapeError


def test_sum_backward_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_sum_of_squares_gradient():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])


def test_arithmetic_forward_values():
    a = Tensor([1.0, 2.0])
    b = Tensor([3.0, 5.0])
    np.testing.assert_allclose((a + b).data, [4.0, 7.0])
    np.testing.assert_allclose((a - b).data, [-2.0, -3.0])
    np.testing.assert_allclose((a * b).data, [3.0, 10.0])
    np.testing.assert_allclose((a / b).data, [1.0 / 3.0, 0.4])
    np.testing.assert_allclose((a**2).data, [1.0, 4.0])
    np.testing.assert_allclose((2.0 - a).data, [1.0, 0.0])
    np.testing.assert_allclose((1.0 / b).data, [1.0 / 3.0, 0.2])


def test_broadcast_backward_sums_over_expanded_axes():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones((1, 3)), requires_grad=True)
    (a * b).sum().backward()
    assert a.grad.shape == (2, 3)
    assert b.grad.shape == (1, 3)
    np.testing.assert_array_equal(b.grad, np.full((1, 3), 2.0))


def test_activation_analytic_values():
    assert Tensor(0.0).tanh().item() == 0.0
    assert Tensor(0.0).sigmoid().item() == 0.5
    assert Tensor(-1.0).leaky_relu(0.2).item() == pytest.approx(-0.2)
    assert Tensor(-1.0).relu().item() == 0.0
    assert Tensor(3.0).relu().item() == 3.0


def test_sigmoid_stable_at_large_inputs():
    out = Tensor([-800.0, 800.0]).sigmoid()
    np.testing.assert_allclose(out.data, [0.0, 1.0], atol=1e-12)


def test_clamp_blocks_gradient_outside_range():
    x = Tensor([-2.0, 0.5, 3.0], requires_grad=True)
    x.clamp(low=0.0, high=1.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_abs_subgradient_zero_at_zero():
    x = Tensor([-2.0, 0.0, 3.0], requires_grad=True)
    x.abs().sum().backward()
    np.testing.assert_array_equal(x.grad, [-1.0, 0.0, 1.0])


def test_matmul_known_product():
    a = Tensor([[1.0, 2.0]])
    b = Tensor([[3.0], [4.0]])
    assert (a @ b).item() == 11.0


def test_matmul_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        Tensor(np.ones(3)) @ Tensor(np.ones((3, 2)))


def test_mean_uses_axis_counts():
    x = Tensor(np.arange(24.0).reshape(2, 3, 4), requires_grad=True)
    m = x.mean(axis=(0, 2), keepdims=True)
    np.testing.assert_allclose(m.data, x.data.mean(axis=(0, 2), keepdims=True))
    m.sum().backward()
    np.testing.assert_allclose(x.grad, np.full((2, 3, 4), 1.0 / 8.0))


def test_getitem_accumulates_repeated_advanced_indices():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    idx = np.array([0, 0, 2])
    x[idx].sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 0.0, 1.0])


def test_stack_and_concat_route_gradients():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([3.0, 4.0], requires_grad=True)
    s = Tensor.stack([a, b], axis=0)
    assert s.shape == (2, 2)
    (s * Tensor([[1.0, 2.0], [3.0, 4.0]])).sum().backward()
    np.testing.assert_array_equal(a.grad, [1.0, 2.0])
    np.testing.assert_array_equal(b.grad, [3.0, 4.0])

    a.zero_grad()
    b.zero_grad()
    c = Tensor.concat([a.reshape(1, 2), b.reshape(1, 2)], axis=1)
    assert c.shape == (1, 4)
    (c * Tensor([[1.0, 2.0, 3.0, 4.0]])).sum().backward()
    np.testing.assert_array_equal(a.grad, [1.0, 2.0])
    np.testing.assert_array_equal(b.grad, [3.0, 4.0])


def test_transpose_backward_restores_layout():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    g = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    (x.T * Tensor(g)).sum().backward()
    np.testing.assert_array_equal(x.grad, g.T)


def test_no_grad_suppresses_graph():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad
    with pytest.raises(RuntimeError):
        y.backward()


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_double_backward_raises():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_diamond_graph_accumulates_once_per_path():
    x = Tensor(2.0, requires_grad=True)
    y = x * x  # shared node
    (y + y).backward()
    assert x.grad == pytest.approx(8.0)


def test_leaves_survive_for_new_graphs():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * x).sum().backward()
    first = x.grad.copy()
    x.zero_grad()
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, first)


def test_nonfinite_forward_raises():
    with np.errstate(divide="ignore"):
        with pytest.raises(NumericError):
            Tensor([0.0]).log()
        with pytest.raises(NumericError):
            Tensor([1.0]) / Tensor([0.0])


def test_forward_deterministic_bitwise():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((4, 4))
    b = rng.standard_normal((4, 4))
    r1 = (Tensor(a) @ Tensor(b)).tanh().data
    r2 = (Tensor(a) @ Tensor(b)).tanh().data
    assert np.array_equal(r1, r2)


def test_composite_expression_gradcheck():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 2)), requires_grad=True)

    def f():
        h = (x @ w).tanh()
        return (h * h).sum() + h.sigmoid().mean() + (h.exp() + 1.0).log().sum()

    assert max_relative_error(f, [x, w], rng=rng) < 1e-4


def test_elementwise_gradcheck_away_from_kinks():
    rng = np.random.default_rng(5)
    base = rng.standard_normal(32)
    base[np.abs(base) < 1e-2] = 0.5  # keep clear of relu/abs kinks
    x = Tensor(base, requires_grad=True)

    def f():
        return (
            x.relu().sum()
            + x.leaky_relu(0.2).sum()
            + x.abs().sum()
            + x.sin().sum()
            + x.cos().sum()
            + (x * 0.3).exp().sum()
            + (x.abs() + 0.5).sqrt().sum()
            + (x.abs() + 0.5).log().sum()
        )

    assert max_relative_error(f, [x], rng=rng) < 1e-4
