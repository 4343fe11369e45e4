import numpy as np
import pytest

from gaitset import tensor as T
from gaitset.errors import UsageError
from gaitset.nn import grad_check


def t(data, grad=True):
    return T.Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def test_backward_of_sum_is_ones():
    x = t([[1.0, 2.0], [3.0, 4.0]])
    T.tsum(x).backward()
    assert np.array_equal(x.grad, np.ones((2, 2)))


def test_zero_times_x_has_zero_grad():
    x = t([1.0, -2.0, 3.0])
    T.tsum(x * 0.0).backward()
    assert np.array_equal(x.grad, np.zeros(3))


def test_grads_accumulate_without_zeroing():
    x = t([1.0, 2.0])
    loss = T.tsum(x * x)
    loss.backward()
    first = x.grad.copy()
    loss.backward()
    assert np.allclose(x.grad, 2 * first)


def test_backward_rejects_nonscalar():
    x = t([1.0, 2.0])
    with pytest.raises(UsageError):
        (x * 2.0).backward()


def test_shared_parent_accumulates():
    x = t([3.0])
    T.tsum(x * x).backward()
    assert np.allclose(x.grad, [6.0])


def test_broadcast_add_unbroadcasts_grad():
    a = t(np.ones((2, 3)))
    b = t(np.ones(3))
    T.tsum(a + b).backward()
    assert a.grad.shape == (2, 3)
    assert b.grad.shape == (3,)
    assert np.array_equal(b.grad, np.full(3, 2.0))


def test_amax_ties_route_to_first_occurrence():
    x = t([[1.0, 5.0, 5.0]])
    T.tsum(T.amax(x, axis=1)).backward()
    assert np.array_equal(x.grad, [[0.0, 1.0, 0.0]])


def test_median_low_even_count_takes_lower_middle():
    x = t([[1.0, 3.0, 2.0, 10.0]])
    out = T.median_low(x, axis=1)
    assert out.item() == 2.0
    T.tsum(out).backward()
    assert np.array_equal(x.grad, [[0.0, 0.0, 1.0, 0.0]])


def test_median_low_odd_count_is_true_median():
    x = t([[5.0, 1.0, 3.0]])
    assert T.median_low(x, axis=1).item() == 3.0


def test_leaky_relu_values_and_grad():
    x = t([5.0, -2.0, -1.0])
    y = T.leaky_relu(x, 0.01)
    assert np.allclose(y.data, [5.0, -0.02, -0.01])
    T.tsum(y).backward()
    assert np.allclose(x.grad, [1.0, 0.01, 0.01])


def test_precision_context_switches_default_dtype():
    assert T.Tensor([1.0]).dtype == np.float32
    with T.precision("float64"):
        assert T.Tensor([1.0]).dtype == np.float64
    assert T.Tensor([1.0]).dtype == np.float32


def test_no_grad_suppresses_tape():
    x = t([1.0])
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_grad_check_arithmetic():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4)) + 3.0  # keep divisor away from zero
    assert grad_check(lambda x, y: T.tsum(x * y + x - y / 2.0), [a, b]) < 1e-7
    assert grad_check(lambda x, y: T.tsum(x / y), [a, b]) < 1e-7


def test_grad_check_matmul():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 3))
    assert grad_check(lambda x, y: T.tsum(T.matmul(x, y)), [a, b]) < 1e-7


def test_grad_check_broadcast_matmul():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((2, 5, 1, 3))
    b = rng.standard_normal((5, 3, 4))
    err = grad_check(lambda x, y: T.tsum(T.matmul(x, y)), [a, b])
    assert err < 1e-7


def test_grad_check_shape_ops():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 4))

    def fn(a):
        y = T.transpose(T.reshape(a, (6, 4)), (1, 0))
        z = T.concat([y, y], axis=0)
        return T.tsum(z[2:5] * 3.0)

    assert grad_check(fn, [x]) < 1e-7


def test_grad_check_reductions_and_scalars():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((3, 5)) + np.arange(15).reshape(3, 5) * 1e-3  # break ties

    def fn(a):
        return T.tsum(T.amax(a, axis=1)) + T.tsum(T.median_low(a, axis=0)) + T.tsum(T.tmean(a, axis=1))

    assert grad_check(fn, [x]) < 1e-6


def test_grad_check_nonlinearities():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((4, 4)) + 0.5  # keep away from relu kink

    def fn(a):
        return T.tsum(T.sigmoid(a) + T.exp(a * 0.1) + T.leaky_relu(a) + T.sqrt(T.relu(a) + 1.0))

    assert grad_check(fn, [x]) < 1e-6
