"""Tensor, tape, elementwise ops, matmul, backward and grad_check."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canet.tensor import (
    ShapeError,
    Tape,
    Tensor,
    add,
    backward,
    elementwise_forward,
    grad_check,
    matmul,
    multiply,
    relu,
    reshape,
    sigmoid,
    tensor_sum,
)

from oracles import matmul_naive


class TestElementwise:
    def test_sigmoid_at_zero(self):
        out = elementwise_forward("sigmoid", Tensor([0.0]))
        np.testing.assert_allclose(out.data, [0.5])

    def test_relu_definition(self):
        out = elementwise_forward("relu", Tensor([-1.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 2.0])

    def test_add_broadcast_scalar(self):
        out = elementwise_forward("add", Tensor([1.0, 2.0, 3.0]), Tensor([10.0]))
        np.testing.assert_array_equal(out.data, [11.0, 12.0, 13.0])

    def test_multiply_broadcast_axis(self):
        a = Tensor(np.ones((2, 3), dtype=np.float32))
        b = Tensor(np.array([1.0, 2.0, 3.0], dtype=np.float32))
        np.testing.assert_array_equal(multiply(a, b).data, [[1, 2, 3], [1, 2, 3]])

    def test_incompatible_shapes_raise(self):
        with pytest.raises(ShapeError):
            add(Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_unknown_op_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            elementwise_forward("divide", Tensor([1.0]), Tensor([2.0]))

    def test_binary_requires_two_operands(self):
        with pytest.raises(ValueError, match="two operands"):
            elementwise_forward("add", Tensor([1.0]))

    def test_unary_rejects_second_operand(self):
        with pytest.raises(ValueError, match="single operand"):
            elementwise_forward("relu", Tensor([1.0]), Tensor([1.0]))

    def test_sigmoid_range(self):
        x = Tensor(np.linspace(-30, 30, 101))
        y = sigmoid(x).data
        assert np.all(y > 0) and np.all(y < 1)

    def test_relu_nonnegative(self):
        rng = np.random.default_rng(0)
        y = relu(Tensor(rng.standard_normal(50))).data
        assert np.all(y >= 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_commutative_ops_broadcast_symmetry(self, rows, cols, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.standard_normal((rows, cols)))
        b = Tensor(rng.standard_normal(cols))  # broadcasts along rows
        for op in ("add", "multiply"):
            ab = elementwise_forward(op, a, b)
            ba = elementwise_forward(op, b, a)
            np.testing.assert_array_equal(ab.data, ba.data)


class TestMatmul:
    def test_identity(self):
        m = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        out = matmul(Tensor(np.eye(2)), m)
        np.testing.assert_array_equal(out.data, m.data)

    def test_hand_dot_product(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(42)
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        out = matmul(Tensor(a), Tensor(b))
        np.testing.assert_allclose(out.data, matmul_naive(a, b), rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_rank_checked(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
        with Tape() as tape:
            loss = tensor_sum(x)
        grads = backward(loss, tape)
        np.testing.assert_array_equal(grads[x], np.ones((3, 4), dtype=np.float32))

    def test_square_gradient(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        with Tape() as tape:
            loss = tensor_sum(multiply(x, x))
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, [6.0])

    def test_chain_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        w = Tensor(rng.standard_normal((4, 3)), requires_grad=True, dtype=np.float64)

        def f(t):
            return tensor_sum(sigmoid(matmul(t, w)))

        x = Tensor(rng.standard_normal((2, 4)), dtype=np.float64)
        assert grad_check(f, x) < 1e-5

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = multiply(x, x)
        with pytest.raises(ValueError, match="scalar"):
            backward(y, tape)

    def test_loss_off_tape_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            tensor_sum(x)
        stray = Tensor(np.array(1.0), requires_grad=True)
        with pytest.raises(ValueError, match="tape"):
            backward(stray, tape)

    def test_unreachable_parameter_gets_zeros(self):
        x = Tensor(np.ones(3), requires_grad=True)
        unused = Tensor(np.ones(2), requires_grad=True)
        with Tape() as tape:
            loss = tensor_sum(x)
            tensor_sum(unused)  # separate branch, does not feed the loss
        grads = backward(loss, tape)
        np.testing.assert_array_equal(grads[unused], np.zeros(2, dtype=np.float32))

    def test_repeated_backward_accumulates(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        with Tape() as tape:
            loss = tensor_sum(multiply(x, x))
        backward(loss, tape)
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, [8.0])

    def test_broadcast_bias_gradient_sums_over_batch(self):
        b = Tensor(np.zeros(3), requires_grad=True)
        x = Tensor(np.ones((4, 3)))
        with Tape() as tape:
            loss = tensor_sum(add(x, b))
        backward(loss, tape)
        np.testing.assert_array_equal(b.grad, [4.0, 4.0, 4.0])

    def test_shared_input_gradients_accumulate(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with Tape() as tape:
            loss = tensor_sum(add(multiply(x, x), x))  # x^2 + x
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, [3.0, 5.0])

    def test_forward_and_gradient_determinism(self):
        def run():
            rng = np.random.default_rng(7)
            x = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
            w = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
            with Tape() as tape:
                loss = tensor_sum(sigmoid(matmul(x, w)))
            backward(loss, tape)
            return loss.data.copy(), x.grad.copy(), w.grad.copy()

        first, second = run(), run()
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_no_recording_without_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = multiply(x, x)  # no active tape: output is a plain value
        assert y.requires_grad is False

    def test_no_recording_when_no_input_requires_grad(self):
        with Tape() as tape:
            multiply(Tensor(np.ones(3)), Tensor(np.ones(3)))
        assert tape.nodes == []


class TestReshape:
    def test_roundtrip(self):
        x = Tensor(np.arange(6, dtype=np.float32), requires_grad=True)
        with Tape() as tape:
            loss = tensor_sum(multiply(reshape(x, (2, 3)), reshape(x, (2, 3))))
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, 2 * np.arange(6, dtype=np.float32))


class TestGradCheck:
    def test_linear_is_exact(self):
        x = Tensor(np.random.default_rng(0).standard_normal(5), dtype=np.float64)
        assert grad_check(tensor_sum, x) <= 1e-9

    def test_sigmoid_sum(self):
        x = Tensor(np.array([0.3, -0.7]), dtype=np.float64)
        assert grad_check(lambda t: tensor_sum(sigmoid(t)), x) <= 1e-6

    def test_does_not_mutate_input(self):
        data = np.random.default_rng(3).standard_normal(4)
        x = Tensor(data.copy(), dtype=np.float64)
        grad_check(lambda t: tensor_sum(sigmoid(t)), x)
        np.testing.assert_array_equal(x.data, data)
        assert x.requires_grad is False and x.grad is None

    def test_requires_double_precision(self):
        with pytest.raises(TypeError, match="double"):
            grad_check(tensor_sum, Tensor(np.ones(3, dtype=np.float32)))

    def test_non_scalar_forward_rejected(self):
        x = Tensor(np.ones(3), dtype=np.float64)
        with pytest.raises(ValueError, match="scalar"):
            grad_check(lambda t: multiply(t, t), x)

    def test_invalid_eps_rejected(self):
        x = Tensor(np.ones(2), dtype=np.float64)
        with pytest.raises(ValueError, match="eps"):
            grad_check(tensor_sum, x, eps=0.0)


class TestTensorBasics:
    def test_non_float_data_becomes_float32(self):
        t = Tensor([1, 2, 3])
        assert t.dtype == np.float32

    def test_invariant_shape_matches_data(self):
        t = Tensor(np.zeros((2, 3, 4)))
        assert t.size == 24 and t.shape == (2, 3, 4) and t.ndim == 3

    def test_grad_slot_shape_after_backward(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            loss = tensor_sum(x)
        backward(loss, tape)
        assert x.grad.shape == x.shape and x.grad.dtype == x.dtype
