"""Tensor substrate: taped ops, backward semantics, softmax contracts."""

import numpy as np
import pytest

from lipgcn.errors import DimensionError, UsageError
from lipgcn.numerics import GradTape, Tensor, backward, no_grad, ops


def test_matmul_identity():
    x = Tensor(np.arange(9.0).reshape(3, 3))
    out = ops.matmul(Tensor(np.eye(3)), x)
    assert np.array_equal(out.data, x.data)


def test_matmul_hand_case():
    out = ops.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_against_triple_loop(rng):
    a = rng.standard_normal((4, 5))
    b = rng.standard_normal((5, 6))
    want = np.zeros((4, 6))
    for i in range(4):
        for j in range(6):
            for k in range(5):
                want[i, j] += a[i, k] * b[k, j]
    got = ops.matmul(Tensor(a), Tensor(b)).data
    assert np.abs(got - want).max() < 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_backward_sum_gives_ones():
    x = Tensor([3.0, -1.0, 2.0], requires_grad=True)
    backward(ops.sum_(x))
    assert np.array_equal(x.grad, np.ones(3))


def test_backward_quadratic_hand_case():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(ops.sum_(ops.mul(x, x)))
    assert np.allclose(x.grad, [2.0, 4.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = ops.mul(x, x)
    with pytest.raises(UsageError):
        backward(y)


def test_backward_twice_accumulates_exactly():
    # documented contract: repeated backward on the same loss doubles leaf grads
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    loss = ops.sum_(ops.mul(x, x))
    backward(loss)
    first = x.grad.copy()
    backward(loss)
    assert np.array_equal(x.grad, 2.0 * first)


def test_unreachable_tensor_has_no_grad():
    x = Tensor([1.0], requires_grad=True)
    y = Tensor([2.0], requires_grad=True)
    backward(ops.sum_(ops.mul(x, x)))
    assert y.grad is None


def test_shared_subexpression_accumulates_once_per_use():
    x = Tensor([2.0], requires_grad=True)
    y = ops.mul(x, x)
    backward(ops.sum_(ops.add(y, y)))  # d/dx 2x^2 = 4x
    assert np.allclose(x.grad, [8.0])


def test_no_grad_suppresses_taping():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        y = ops.mul(x, x)
    assert y._node is None and not y.requires_grad


def test_gradtape_records_operations_in_execution_order():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = ops.sum_(ops.tanh(ops.mul(x, x)))
    tape = GradTape(loss)
    assert tape.operations == ["mul", "tanh", "sum"]


def test_gradtape_first_nonfinite_names_op():
    x = Tensor([1.0, 0.0], requires_grad=True)
    with np.errstate(divide="ignore"):
        loss = ops.sum_(ops.log(x))  # log(0) = -inf
    tape = GradTape(loss)
    op, _ = tape.first_nonfinite()
    assert op == "log"


# softmax contracts -----------------------------------------------------------


def test_softmax_uniform_logits():
    out = ops.softmax(Tensor(np.zeros((1, 4))), axis=1)
    assert np.abs(out.data - 0.25).max() < 1e-15


def test_softmax_hand_case():
    out = ops.softmax(Tensor([[0.0, np.log(3.0)]]), axis=1)
    assert np.abs(out.data - [[0.25, 0.75]]).max() < 1e-12


def test_softmax_rows_sum_to_one(rng):
    x = rng.standard_normal((7, 5)) * 10
    out = ops.softmax(Tensor(x), axis=1)
    assert np.abs(out.data.sum(axis=1) - 1.0).max() < 1e-12
    assert (out.data > 0).all()


def test_softmax_shift_invariance(rng):
    x = rng.standard_normal((4, 6))
    a = ops.softmax(Tensor(x), axis=1).data
    b = ops.softmax(Tensor(x + 100.0), axis=1).data
    assert np.abs(a - b).max() < 1e-12


# pointwise dispatch ----------------------------------------------------------


def test_pointwise_examples():
    assert ops.pointwise("relu", Tensor([-1.0])).data[0] == 0.0
    assert ops.pointwise("relu", Tensor([2.0])).data[0] == 2.0
    assert ops.pointwise("sigmoid", Tensor([0.0])).data[0] == 0.5
    assert np.allclose(ops.pointwise("add", Tensor([1.0]), Tensor([2.0])).data, [3.0])
    assert np.allclose(ops.pointwise("mul", Tensor([3.0]), Tensor([2.0])).data, [6.0])
    assert np.allclose(ops.pointwise("scale", Tensor([3.0]), 0.5).data, [1.5])
    with pytest.raises(UsageError):
        ops.pointwise("nope", Tensor([1.0]))


def test_broadcast_mismatch_is_dimension_error():
    with pytest.raises(DimensionError):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))


def test_operator_sugar():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([3.0, 4.0])
    out = ops.sum_((a + b) * a - b / b)
    backward(out)
    # d/da [a^2 + ab] = 2a + b
    assert np.allclose(a.grad, [5.0, 8.0])
