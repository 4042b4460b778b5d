import math

import numpy as np
import pytest
from conftest import check_grads, numeric_grad, rel_err

from gcarom import tensor as T
from gcarom.errors import ShapeError
from gcarom.tensor import Tensor


def rand(shape, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(-1, 1, size=shape), True)


# -- matmul -------------------------------------------------------------------

def test_matmul_identity():
    b = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), Tensor(b)).data, b)


def test_matmul_hand_example():
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_matmul_gradient_matches_finite_differences():
    a, b = rand((3, 4), 1), rand((4, 2), 2)
    assert check_grads(lambda: T.total(T.matmul(a, b)), [a, b]) < 1e-6


def test_matmul_gradient_closed_form():
    # d sum(AB)/dA = 1 B^T
    a, b = rand((3, 4), 1), rand((4, 2), 2)
    T.total(T.matmul(a, b)).backward()
    np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T, rtol=1e-14)


# -- elementwise --------------------------------------------------------------

def test_tanh_at_zero():
    x = Tensor(np.array([0.0]), True)
    y = T.tanh(x)
    y.backward()
    assert y.item() == 0.0
    assert x.grad[0] == 1.0


def test_elu_negative_one():
    assert T.elu(Tensor([-1.0])).item() == pytest.approx(math.exp(-1) - 1, abs=1e-15)
    assert T.elu(Tensor([-1.0])).item() == pytest.approx(-0.6321, abs=1e-4)
    assert T.elu(Tensor([2.5])).item() == 2.5


def test_exp_gradient_at_two():
    x = Tensor(np.array([2.0]), True)
    T.exp(x).backward()
    assert abs(x.grad[0] - math.e ** 2) < 1e-10


def test_square_gradient_at_three():
    x = Tensor(np.array([3.0]), True)
    T.square(x).backward()
    assert x.grad[0] == 6.0


@pytest.mark.parametrize("op", ["add", "sub", "mul"])
def test_binary_ops_fd(op):
    a, b = rand((3, 3), 3), rand((3, 3), 4)
    assert check_grads(lambda: T.total(T.square(T.elementwise(op, a, b))), [a, b]) < 1e-6


@pytest.mark.parametrize("op", ["exp", "tanh", "elu", "square"])
def test_unary_ops_fd(op):
    a = rand((4, 3), 5)
    assert check_grads(lambda: T.total(T.mul(T.elementwise(op, a), T.elementwise(op, a))), [a]) < 1e-6


def test_scale_fd_and_value():
    a = rand((2, 2), 6)
    np.testing.assert_array_equal(T.scale(a, 2.5).data, 2.5 * a.data)
    assert check_grads(lambda: T.total(T.square(T.scale(a, -1.5))), [a]) < 1e-6


def test_binary_shape_mismatch():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_propagates():
    out = T.tanh(Tensor([np.nan, 1.0]))
    assert np.isnan(out.data[0]) and np.isfinite(out.data[1])
    assert np.isinf(T.exp(Tensor([1000.0])).data[0])


# -- gather / scatter ---------------------------------------------------------

def test_gather_example():
    out = T.gather(Tensor([[1.0], [2.0], [3.0]]), [2, 0])
    np.testing.assert_array_equal(out.data, [[3.0], [1.0]])


def test_gather_duplicate_rows_sum_grads():
    h = Tensor([[1.0], [2.0], [3.0]], True)
    w = Tensor([[5.0], [7.0]])
    T.total(T.mul(T.gather(h, [0, 0]), w)).backward()
    np.testing.assert_array_equal(h.grad, [[12.0], [0.0], [0.0]])


def test_gather_empty_index():
    out = T.gather(Tensor(np.ones((3, 2))), np.array([], dtype=int))
    assert out.shape == (0, 2)


def test_gather_out_of_range():
    with pytest.raises(IndexError):
        T.gather(Tensor(np.ones((3, 1))), [3])


def test_scatter_mean_example():
    out = T.scatter_mean(Tensor([[2.0], [4.0]]), [1, 1], 2)
    np.testing.assert_array_equal(out.data, [[0.0], [3.0]])


def test_scatter_mean_single_message_unchanged():
    out = T.scatter_mean(Tensor([[1.5, -2.0]]), [0], 1)
    np.testing.assert_array_equal(out.data, [[1.5, -2.0]])


def test_scatter_mean_out_of_range():
    with pytest.raises(IndexError):
        T.scatter_mean(Tensor([[1.0]]), [2], 2)


def test_scatter_mean_grad_is_count_share():
    msgs = Tensor(np.ones((3, 1)), True)
    T.total(T.scatter_mean(msgs, [0, 0, 1], 2)).backward()
    np.testing.assert_allclose(msgs.grad, [[0.5], [0.5], [1.0]])


def test_scatter_mean_fd():
    msgs = rand((6, 2), 7)
    targets = [0, 2, 2, 1, 0, 2]
    w = Tensor(np.random.default_rng(8).normal(size=(3, 2)))
    assert check_grads(lambda: T.total(T.mul(T.scatter_mean(msgs, targets, 3), w)), [msgs]) < 1e-6


def test_gather_then_scatter_over_permutation_is_identity():
    rng = np.random.default_rng(9)
    h = Tensor(rng.normal(size=(7, 3)))
    perm = rng.permutation(7)
    out = T.scatter_mean(T.gather(h, perm), perm, 7)
    np.testing.assert_array_equal(out.data, h.data)


def test_mixture_aggregate_matches_unfused_route():
    rng = np.random.default_rng(10)
    n, e, q, c, batch = 5, 12, 3, 2, 2
    src = rng.integers(n, size=e)
    tgt = np.concatenate([np.arange(n), rng.integers(n, size=e - n)])
    x = Tensor(rng.normal(size=(n, batch * q * c)), True)
    w = Tensor(rng.uniform(size=(e, q)), True)

    def fused():
        return T.total(T.square(T.mixture_aggregate(x, w, src, tgt, n, batch)))

    def unfused():
        return T.total(T.square(T.scatter_mean(T.mixture(T.gather(x, src), w, batch), tgt, n)))

    np.testing.assert_allclose(fused().item(), unfused().item(), rtol=1e-13)
    assert check_grads(fused, [x, w]) < 1e-6
    assert check_grads(unfused, [x, w]) < 1e-6


# -- backward -----------------------------------------------------------------

def test_backward_rejects_non_scalar():
    with pytest.raises(ShapeError):
        T.backward(T.square(rand((2, 2))))


def test_elu_matmul_chain_fd():
    a, b = rand((3, 4), 11), rand((4, 3), 12)
    assert check_grads(lambda: T.total(T.elu(T.matmul(a, b))), [a, b]) < 1e-6


def test_fan_out_accumulates():
    x = Tensor(np.array([[2.0]]), True)
    T.total(T.add(T.mul(x, x), x)).backward()  # x^2 + x
    assert x.grad[0, 0] == 5.0


def test_backward_deterministic():
    def run():
        a, b = rand((5, 4), 13), rand((4, 6), 14)
        T.total(T.tanh(T.matmul(a, b))).backward()
        return a.grad.copy(), b.grad.copy()
    (a1, b1), (a2, b2) = run(), run()
    assert a1.tobytes() == a2.tobytes() and b1.tobytes() == b2.tobytes()


def test_shared_subexpression_visited_once():
    x = Tensor(np.array([[1.5]]), True)
    y = T.exp(x)
    T.total(T.add(y, y)).backward()
    assert x.grad[0, 0] == pytest.approx(2 * math.exp(1.5), rel=1e-15)


def test_reshape_permute_fd():
    a = rand((2, 3, 2), 15)
    w = Tensor(np.random.default_rng(16).normal(size=(3, 4)))
    assert check_grads(lambda: T.total(T.mul(T.reshape(T.permute(a, (1, 0, 2)), (3, 4)), w)), [a]) < 1e-6


def test_add_rowvec_fd():
    x, b = rand((4, 3), 17), rand((3,), 18)
    assert check_grads(lambda: T.sum_squares(T.add_rowvec(x, b)), [x, b]) < 1e-6


def test_numeric_grad_helper_on_quadratic():
    x = np.array([1.0, -2.0])
    g = numeric_grad(lambda: float(np.sum(x ** 2)), x)
    assert rel_err(g, 2 * x) < 1e-9


# -- Adam ---------------------------------------------------------------------

def adam_once(theta, grad, lr=1e-3, wd=0.0):
    p = Tensor(np.array([theta]), True)
    p.grad = np.array([grad])
    T.adam_step([p], T.AdamState.for_params([p]), lr, wd)
    return p.data[0]


def test_adam_first_step_unit_gradient():
    # m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
    assert adam_once(0.0, 1.0) == pytest.approx(-1e-3 / (1 + 1e-8), abs=1e-15)


def test_adam_zero_gradient_no_change():
    assert adam_once(0.7, 0.0) == 0.7


def test_adam_weight_decay_shrinks():
    assert adam_once(1.0, 0.0, wd=1e-2) < 1.0


def test_adam_lr_zero_bit_identical():
    p = rand((3, 3), 19)
    before = p.data.tobytes()
    p.grad = np.random.default_rng(20).normal(size=(3, 3))
    T.adam_step([p], T.AdamState.for_params([p]), 0.0, 1e-5)
    assert p.data.tobytes() == before


def test_adam_missing_grad():
    p = rand((2,), 21)
    with pytest.raises(RuntimeError):
        T.adam_step([p], T.AdamState.for_params([p]))


def test_adam_two_steps_hand_recurrence():
    p = Tensor(np.array([0.0]), True)
    st = T.AdamState.for_params([p])
    for g in (1.0, -2.0):
        p.grad = np.array([g])
        T.adam_step([p], st, 1e-2, 0.0)
    m1, v1 = 0.1, 0.001
    m2, v2 = 0.9 * m1 + 0.1 * -2.0, 0.999 * v1 + 0.001 * 4.0
    step1 = 1e-2 * (m1 / 0.1) / (math.sqrt(v1 / 0.001) + 1e-8)
    step2 = 1e-2 * (m2 / (1 - 0.81)) / (math.sqrt(v2 / (1 - 0.999 ** 2)) + 1e-8)
    assert p.data[0] == pytest.approx(-step1 - step2, rel=1e-12)
    assert st.step_count == 2
