import numpy as np
import pytest

from tgafnet import functional as F
from tgafnet.autograd import Tensor, backward, float64_mode, get_default_dtype


def test_default_dtype_is_float32_and_f64_mode_restores():
    assert get_default_dtype() == np.float32
    with float64_mode():
        assert get_default_dtype() == np.float64
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_sum_of_squares_gradient_is_twice_input(f64):
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(F.sum_all(F.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_shared_subexpression_accumulates(f64):
    # y = x*x + x*x uses x four times; dy/dx = 4x
    x = Tensor([3.0], requires_grad=True)
    sq = F.mul(x, x)
    backward(F.sum_all(F.add(sq, sq)))
    np.testing.assert_allclose(x.grad, [12.0])


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        backward(F.mul(x, x))


def test_leaf_without_requires_grad_gets_no_grad(f64):
    a = Tensor([2.0], requires_grad=True)
    b = Tensor([5.0])
    backward(F.sum_all(F.mul(a, b)))
    assert b.grad is None
    np.testing.assert_allclose(a.grad, [5.0])


def test_repeated_backward_accumulates_without_aliasing(f64):
    x = Tensor([1.0], requires_grad=True)
    backward(F.sum_all(F.mul(x, x)))
    first = x.grad
    backward(F.sum_all(F.mul(x, x)))
    np.testing.assert_allclose(x.grad, [4.0])
    np.testing.assert_allclose(first, [2.0])
    x.zero_grad()
    assert x.grad is None


def test_deep_chain_does_not_recurse(f64):
    x = Tensor([1.0], requires_grad=True)
    y = x
    for _ in range(5000):
        y = F.add(y, Tensor([0.0]))
    backward(F.sum_all(y))
    np.testing.assert_allclose(x.grad, [1.0])


def test_tensor_copies_input_data():
    a = np.zeros(3, dtype=np.float32)
    t = Tensor(a)
    a[0] = 1.0
    assert t.data[0] == 0.0


def test_zero_sized_dimension_rejected():
    with pytest.raises(ValueError):
        Tensor(np.zeros((2, 0)))
