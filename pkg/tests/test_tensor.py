import numpy as np
import pytest

from alganvc.blocks import conv1d, glu, instance_norm, relu, sigmoid
from alganvc.tensor import (
    Adam,
    AdamState,
    Tensor,
    adam_step,
    backward,
    grad_check,
    no_grad,
    zero_grads,
)


class TestConstruction:
    def test_from_values_row_major(self):
        t = Tensor.from_values((2, 2), [1.0, 2.0, 3.0, 4.0])
        assert t.shape == (2, 2)
        np.testing.assert_array_equal(t.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_from_values_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            Tensor.from_values((3,), [1.0, 2.0])

    def test_mcep_shaped_zeros(self):
        t = Tensor.from_values((24, 128), [0.0] * (24 * 128))
        assert t.shape == (24, 128)
        assert not t.data.any()

    def test_default_dtype_is_float64(self):
        assert Tensor([1.0, 2.0]).dtype == np.float64


class TestBackward:
    def test_square_at_three(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        backward(x * x)
        assert x.grad == pytest.approx(6.0)

    def test_relu_subgradient(self):
        x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
        backward(relu(x).sum())
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_grad_accumulates_across_uses(self):
        x = Tensor(np.array(2.0), requires_grad=True)
        backward(x * x + x)  # d/dx = 2x + 1
        assert x.grad == pytest.approx(5.0)

    def test_nonscalar_needs_explicit_grad(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(x * 2.0)

    def test_explicit_grad_seed(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        backward(x * 3.0, grad=np.array([1.0, 10.0]))
        np.testing.assert_allclose(x.grad, [3.0, 30.0])

    def test_interior_grads_released(self):
        x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        mid = x * x
        backward(mid.sum())
        assert mid.grad is None
        assert mid._backward is None and mid._prev == ()
        assert x.grad is not None

    def test_linearity_of_add(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        backward(((a + b) * 2.0).sum())
        np.testing.assert_allclose(a.grad, np.full((3, 4), 2.0), rtol=0, atol=1e-12)
        np.testing.assert_allclose(b.grad, np.full((3, 4), 2.0), rtol=0, atol=1e-12)

    def test_broadcast_unbroadcast(self):
        a = Tensor(np.ones((3, 4)), requires_grad=True)
        col = Tensor(np.arange(3.0).reshape(3, 1), requires_grad=True)
        backward((a * col).sum())
        np.testing.assert_allclose(a.grad, np.broadcast_to([[0.0], [1.0], [2.0]], (3, 4)))
        np.testing.assert_allclose(col.grad, np.full((3, 1), 4.0))

    def test_division_by_tensor_rejected(self):
        a = Tensor(np.ones(3))
        with pytest.raises(TypeError):
            a / Tensor(np.ones(3))


class TestNoGrad:
    def test_no_graph_inside_context(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        with no_grad():
            y = x * x
        assert not y.requires_grad
        assert y._backward is None

    def test_detach_cuts_graph(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = (x * x).detach()
        assert not y.requires_grad
        z = y * 3.0
        assert not z.requires_grad


class TestShapeOps:
    def test_reshape_round_trip_grad(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        backward(x.reshape(3, 2).sum())
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_transpose_grad(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        w = Tensor(np.arange(6.0).reshape(3, 2))
        backward((x.transpose(1, 0) * w).sum())
        np.testing.assert_array_equal(x.grad, w.data.transpose(1, 0))

    def test_narrow_zero_fills(self):
        x = Tensor(np.arange(8.0).reshape(2, 4), requires_grad=True)
        backward(x.narrow(1, 1, 2).sum())
        np.testing.assert_array_equal(x.grad, [[0, 1, 1, 0], [0, 1, 1, 0]])

    def test_narrow_bounds(self):
        with pytest.raises(ValueError, match="narrow out of range"):
            Tensor(np.zeros((2, 4))).narrow(1, 3, 2)


class TestGradCheck:
    def test_square(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        assert grad_check(lambda t: (t * t).sum(), x) < 1e-8

    def test_sigmoid_at_zero(self):
        x = Tensor(np.array([0.0]), requires_grad=True)
        y = sigmoid(x)
        backward(y.sum())
        assert x.grad[0] == pytest.approx(0.25, abs=1e-12)
        x2 = Tensor(np.array([0.0]), requires_grad=True)
        assert grad_check(lambda t: sigmoid(t).sum(), x2) < 1e-7

    def test_instance_norm(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(4, 16)), requires_grad=True)
        gamma = Tensor(np.ones(4))
        beta = Tensor(np.zeros(4))
        err = grad_check(lambda t: instance_norm(t, gamma, beta).square().sum(), x)
        assert err < 1e-4

    def test_conv_glu_composite(self):
        # conv1d -> GLU -> sum on a seeded 4x8 input
        rng = np.random.default_rng(17)
        w = Tensor(rng.normal(0, 0.5, size=(6, 4, 3)))
        x = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
        err = grad_check(lambda t: glu(conv1d(t, w)).sum(), x)
        assert err < 1e-4


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = [np.array([0.0])]
        adam_step(p, [np.array([1.0])], AdamState(), lr=0.1)
        # bias correction makes the first step exactly -lr*g/(|g| + eps)
        assert p[0][0] == pytest.approx(-0.1 / (1.0 + 1e-8), abs=1e-15)
        assert p[0][0] == pytest.approx(-0.1, abs=1e-7)

    def test_zero_gradient_no_move(self):
        p = [np.array([1.0, -2.0])]
        adam_step(p, [np.zeros(2)], AdamState(), lr=0.1)
        np.testing.assert_array_equal(p[0], [1.0, -2.0])

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(9)
            p = [rng.normal(size=(3, 3))]
            st = AdamState()
            for _ in range(5):
                adam_step(p, [rng.normal(size=(3, 3))], st, lr=0.01)
            return p[0]

        np.testing.assert_array_equal(run(), run())

    def test_state_shape_pinning(self):
        st = AdamState()
        adam_step([np.zeros(2)], [np.ones(2)], st, lr=0.1)
        with pytest.raises(ValueError, match="does not match"):
            adam_step([np.zeros(2), np.zeros(3)], [np.ones(2), np.ones(3)], st, lr=0.1)

    def test_wrapper_treats_missing_grads_as_zero(self):
        t = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam([t])
        opt.step(0.1)  # no grad populated
        assert t.data[0] == 1.0

    def test_wrapper_step_and_zero_grad(self):
        t = Tensor(np.array([0.0]), requires_grad=True)
        opt = Adam([t])
        backward(t * 1.0)
        opt.step(0.1)
        assert t.data[0] == pytest.approx(-0.1, abs=1e-7)
        opt.zero_grad()
        assert t.grad is None

    def test_zero_grads_helper(self):
        t = Tensor(np.array([1.0]), requires_grad=True)
        t.grad = np.array([5.0])
        zero_grads([t])
        assert t.grad is None
