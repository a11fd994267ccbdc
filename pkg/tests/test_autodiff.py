import numpy as np
import pytest

from firesense import autodiff as ad
from firesense.autodiff import Segments, Tensor, no_grad
from firesense.errors import NonFiniteError, ShapeMismatch

from gradcheck import check

R = np.random.default_rng(7)


def a(*shape):
    return R.normal(size=shape)


def test_elementwise_grads():
    x, y = a(4, 3), a(4, 3)
    assert check(ad.add, x, y)
    assert check(ad.sub, x, y)
    assert check(ad.mul, x, y)
    assert check(ad.neg, x)
    assert check(ad.square, x)
    assert check(ad.sigmoid, x)
    assert check(lambda t: ad.sqrt(t, eps=0.1), np.abs(x) + 0.5)


def test_broadcast_grads():
    assert check(ad.add, a(5, 3), a(1, 3))
    assert check(ad.mul, a(5, 3), a(5, 1))
    assert check(ad.sub, a(1, 1), a(2, 4))


def test_relu_grad_away_from_kink():
    x = a(6, 4)
    x[np.abs(x) < 0.05] = 0.3
    assert check(ad.relu, x)


def test_matmul_grad():
    assert check(ad.matmul, a(4, 3), a(3, 5))


def test_reductions():
    x = a(4, 5)
    assert check(ad.sum, x)
    assert check(lambda t: ad.sum(t, axis=0), x)
    assert check(lambda t: ad.sum(t, axis=1), x)
    assert check(ad.mean, x)
    assert check(lambda t: ad.mean(t, axis=1), x)
    assert check(ad.max, x)
    assert check(lambda t: ad.max(t, axis=0), x)
    assert check(lambda t: ad.max(t, axis=1), x)


def test_structural_ops():
    assert check(lambda p, q: ad.concat([p, q]), a(3, 2), a(3, 4))
    assert check(lambda p, q: ad.concat([p, q], axis=0), a(2, 3), a(4, 3))
    assert check(lambda t: ad.columns(t, [2, 0, 2]), a(3, 4))
    assert check(lambda t: ad.rows(t, 1, 3), a(4, 2))


def test_segment_ops():
    ids = np.array([0, 2, 2, 1, 0, 2, 4])
    seg = Segments(ids, 5)  # segment 3 is empty
    x = a(7, 3)
    assert check(lambda t: ad.segment_sum(t, seg), x)
    assert check(lambda t: ad.segment_mean(t, seg), x)
    assert check(lambda t: ad.segment_max(t, seg), x)
    assert check(lambda t: ad.gather_rows(t, seg), a(5, 3))


def test_segment_values():
    ids = np.array([1, 1, 0, 1])
    x = np.array([[1.0, -2.0], [3.0, 5.0], [4.0, 4.0], [-1.0, 0.0]])
    seg = Segments(ids, 3)
    assert np.allclose(ad.segment_sum(x, seg).data, [[4, 4], [3, 3], [0, 0]])
    assert np.allclose(ad.segment_mean(x, seg).data, [[4, 4], [1, 1], [0, 0]])
    assert np.allclose(ad.segment_max(x, seg).data, [[4, 4], [3, 5], [0, 0]])
    assert np.allclose(ad.gather_rows(np.arange(6.0).reshape(3, 2), seg).data,
                       [[2, 3], [2, 3], [0, 1], [2, 3]])


def test_segment_max_ties_route_to_first():
    x = Tensor(np.array([[2.0], [2.0], [1.0]]), requires_grad=True)
    ad.sum(ad.segment_max(x, Segments([0, 0, 0], 1))).backward()
    assert x.grad.ravel().tolist() == [1.0, 0.0, 0.0]


def test_sigmoid_grad_at_zero():
    x = Tensor(np.zeros((2, 3)), requires_grad=True)
    ad.sum(ad.sigmoid(x)).backward()
    assert np.allclose(x.grad, 0.25)


def test_constant_loss_has_zero_gradient():
    x = Tensor(a(3, 3), requires_grad=True)
    loss = ad.add(ad.mul(ad.sum(x), 0.0), 4.0)
    loss.backward()
    assert np.all(x.grad == 0)


def test_linear_loss_outer_product():
    W = Tensor(a(3, 2), requires_grad=True)
    x = a(1, 3)
    ad.sum(ad.matmul(Tensor(x), W)).backward()
    assert np.allclose(W.grad, np.outer(x, np.ones(2)))


def test_gradient_accumulates_over_reuse():
    x = Tensor(a(2, 2), requires_grad=True)
    ad.sum(ad.add(ad.mul(x, 2.0), ad.mul(x, 3.0))).backward()
    assert np.allclose(x.grad, 5.0)


def test_nan_raises_at_creation():
    with pytest.raises(NonFiniteError):
        Tensor([[np.nan]])
    with pytest.raises(NonFiniteError):
        ad.sqrt(Tensor([[-1.0]]))
    with pytest.raises(NonFiniteError):
        ad.mul(Tensor([[1e308]]), 10.0)


def test_shape_errors():
    with pytest.raises(ShapeMismatch):
        Tensor(np.zeros((2, 2, 2)))
    with pytest.raises(ShapeMismatch):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeMismatch):
        Tensor(np.zeros((2, 2))).backward()
    with pytest.raises(ShapeMismatch):
        Segments([0, 3], 2)


def test_no_grad_builds_no_graph():
    x = Tensor(a(2, 2), requires_grad=True)
    with no_grad():
        y = ad.mul(x, 2.0)
    assert not y.requires_grad
    assert ad.mul(x, 2.0).requires_grad


def test_operator_overloads():
    x, y = Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]])
    assert np.allclose((x + y).data, [[4, 6]])
    assert np.allclose((x - y).data, [[-2, -2]])
    assert np.allclose((x * y).data, [[3, 8]])
    assert np.allclose((-x).data, [[-1, -2]])
    assert np.allclose((x / 2).data, [[0.5, 1.0]])
    assert np.allclose((x @ Tensor([[1.0], [1.0]])).data, [[3.0]])


@pytest.mark.parametrize("act", ["identity", "relu", "sigmoid"])
def test_fused_linear(act):
    x, w, b, pre = a(5, 3), a(3, 4), a(1, 4), a(5, 4)
    assert check(lambda p, q, r: ad.linear(p, q, r, act), x, w, b)
    assert check(lambda p, q, r, s: ad.linear(p, q, r, act, pre=s), x, w, b, pre)
    ref = x @ w + b + pre
    ref = {"identity": ref, "relu": np.maximum(ref, 0), "sigmoid": 1 / (1 + np.exp(-ref))}[act]
    assert np.allclose(ad.linear(x, w, b, act, pre=pre).data, ref, atol=1e-14)
