import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from l3net import autodiff as ad
from l3net.errors import NumericError, ShapeError


def test_relu_values_and_adjoint():
    x = ad.parameter([-1.0, 0.0, 2.0])
    y = ad.relu(x)
    assert y.value.tolist() == [0.0, 0.0, 2.0]
    ad.reduce_sum(y).backward()
    assert x.grad.tolist() == [0.0, 0.0, 1.0]


def test_cross_entropy_uniform_is_log2():
    assert ad.softmax_cross_entropy(np.zeros((1, 2)), [0]).item() == pytest.approx(np.log(2), abs=1e-15)


def test_global_mean_pool_constant():
    x = np.full((2, 64, 3), 1.7)
    assert np.allclose(ad.global_mean_pool_nodes(x).value, 1.7)


def test_grad_check_quadratic(rng):
    theta = rng.standard_normal(7)
    assert ad.grad_check(lambda t: ad.einsum("i,i->", t, t), theta) <= 1e-9


def test_grad_check_rejects_non_finite():
    with pytest.raises(NumericError):
        ad.grad_check(lambda t: ad.scale(ad.reduce_sum(t), np.inf), np.ones(2))


def test_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
        ad.add(np.ones((2, 3)), np.ones(4))
    with pytest.raises(ShapeError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(3, 7), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_gather_scatter_are_adjoint(B, n, C, seed):
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, (n, 4))
    x = rng.standard_normal((B, n, C))
    y = rng.standard_normal((B, n, 4, C))
    lhs = np.sum(ad.gather_patch(x, idx).value * y)
    rhs = np.sum(x * ad.scatter_accumulate(y, idx, n).value)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-2, 2)), arrays(np.float64, (4, 2), elements=st.floats(-2, 2)))
def test_backward_is_linear(a, w):
    def grad_of(f):
        W = ad.parameter(w)
        f(W).backward()
        return W.grad

    f = lambda W: ad.sum_squares(ad.matmul(a, W))
    g = lambda W: ad.reduce_sum(ad.scale(ad.matmul(a, W), 3.0))
    both = grad_of(lambda W: ad.add(f(W), g(W)))
    assert np.allclose(both, grad_of(f) + grad_of(g), atol=1e-12)


@pytest.mark.parametrize("op", [
    lambda t: ad.sum_squares(ad.relu(ad.reshape(t, (2, 3)))),
    lambda t: ad.reduce_sum(ad.leaky_relu(t, 0.2)),
    lambda t: ad.sum_squares(ad.stride2_max_pool_nodes(ad.reshape(t, (1, 6, 1)))),
    lambda t: ad.softmax_cross_entropy(ad.reshape(t, (2, 3)), [1, 2]),
    lambda t: ad.sum_squares(ad.neighborhood_softmax(ad.reshape(t, (2, 3)), np.array([[1, 1, 0], [1, 1, 1]], bool))),
    lambda t: ad.sum_squares(ad.einsum("ij,jk->ik", ad.reshape(t, (2, 3)), np.arange(6.).reshape(3, 2))),
    lambda t: ad.sum_squares(ad.take(t, np.array([[0, 1], [1, 5]]))),
    lambda t: ad.sum_squares(ad.concat([t, ad.scale(t, 2.0)])),
    lambda t: ad.sum_squares(ad.propagate(np.arange(9.).reshape(3, 3), ad.reshape(t, (2, 3, 1)))),
    lambda t: ad.sum_squares(ad.global_mean_pool_nodes(ad.reshape(t, (1, 3, 2)))),
])
def test_primitive_gradients(op, rng):
    theta = rng.uniform(0.1, 1.0, 6) * rng.choice([-1, 1], 6)
    assert ad.grad_check(op, theta) <= 1e-7


def test_batch_norm_gradient_and_running_stats(rng):
    rm, rv = np.zeros(3), np.ones(3)
    x = rng.standard_normal((4, 5, 3))
    gamma, beta = rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)
    w = rng.standard_normal((4, 5, 3))

    def f(t):
        return ad.einsum("bnc,bnc->", ad.batch_norm(ad.reshape(t, x.shape), gamma, beta, rm.copy(), rv.copy(), True), w)

    assert ad.grad_check(f, x.ravel()) <= 1e-6
    out = ad.batch_norm(x, gamma, beta, rm, rv, True).value
    assert np.allclose(((out - beta) / gamma).mean(axis=(0, 1)), 0, atol=1e-12)
    assert np.allclose(rm, 0.1 * x.mean(axis=(0, 1)))
    assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 1), ddof=1))


def test_backward_requires_scalar_seed():
    with pytest.raises(ShapeError):
        ad.parameter(np.ones(3)).backward()
