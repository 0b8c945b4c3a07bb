import numpy as np
import pytest

from l3net import autodiff as ad
from l3net.errors import PreconditionError, StructuralError
from l3net.graph import Graph, build_chain, build_grid, build_ring
from l3net.layers import FilterBank
from l3net.regularization import (RegContext, constrained_minimizer, objective, reg_penalty,
                                  verify_strong_reg_limit)


def _edge_sum_penalty(fb, k):
    """Dirichlet energy written as interior edge differences plus boundary leakage."""
    g, d = fb.graph, fb.orders[k]
    total = 0.0
    for u in range(g.n):
        members = g.neighborhood(u, d).members
        w = dict(zip(members, fb.basis_vector(k, u)))
        for a, b in g.edges:
            wa, wb = w.get(a, 0.0), w.get(b, 0.0)
            if a in w or b in w:
                total += (wa - wb) ** 2
    return total


@pytest.mark.parametrize("graph", [build_ring(9), build_chain(7), build_grid(3, 4)])
def test_penalty_equals_edge_sum(graph, rng):
    fb = FilterBank.random(graph, (1, 2), 1, 1, rng)
    ctx = RegContext.for_bank(fb)
    expect = sum(_edge_sum_penalty(fb, k) for k in range(2))
    assert reg_penalty(fb, ctx).item() == pytest.approx(expect, rel=1e-12)


def test_penalty_gradient_is_2Lb(ring8, rng):
    fb = FilterBank.random(ring8, (1,), 1, 1, rng).as_parameters()
    reg_penalty(fb, RegContext.for_bank(fb)).backward()
    idx, _ = ring8.patch_index(1)
    for u in range(8):
        L = ring8.local_laplacian(u, 1).matrix
        assert np.allclose(fb.basis[0].grad[u], 2 * L @ fb.basis[0].value[u])


def test_objective_scale_law_and_lambda_zero(ring8, rng):
    fb = FilterBank.random(ring8, (1,), 1, 1, rng)
    loss = ad.as_tensor(1.25)
    R = reg_penalty(fb, RegContext.for_bank(fb)).item()
    for lam in (0.0, 0.3, 2.0):
        assert objective(loss, fb, RegContext.for_bank(fb, lam)).item() == pytest.approx(1.25 + lam * R)
    fb2 = FilterBank(fb.graph, fb.orders, [2 * fb.basis[0]], fb.coeffs)
    assert reg_penalty(fb2, RegContext.for_bank(fb2)).item() == pytest.approx(4 * R)


def test_preconditions(ring8, rng):
    with pytest.raises(ValueError):
        RegContext.build(ring8, (1,), -1.0)
    fb = FilterBank.random(ring8, (1,), 1, 1, rng)
    with pytest.raises(StructuralError):
        reg_penalty(fb, RegContext.build(ring8, (2,)))
    with pytest.raises(StructuralError):
        reg_penalty(fb, RegContext.build(build_ring(9), (1,)))
    with pytest.raises(StructuralError):
        objective(0.0, [fb, fb], [RegContext.for_bank(fb)])
    with pytest.raises(PreconditionError):
        verify_strong_reg_limit(build_ring(4), (2,))
    with pytest.raises(ValueError):
        verify_strong_reg_limit(ring8, (1,), 0.0)


def test_constrained_minimizer_path_patch():
    L = np.array([[2.0, -1, 0], [-1, 2, -1], [0, -1, 2]])
    w = constrained_minimizer(L, 2.0)
    assert np.allclose(w, 2 * np.array([0.5, 1 / np.sqrt(2), 0.5]), atol=1e-12)
    assert w @ L @ w == pytest.approx(4 * (2 - np.sqrt(2)), rel=1e-12)


@pytest.mark.parametrize("graph", [build_ring(8), build_grid(7, 7), build_chain(10)])
def test_strong_reg_limit(graph):
    rep = verify_strong_reg_limit(graph, (1,))
    assert rep.min_cosine >= 1 - 1e-8
    assert rep.all_sign_constant
    assert rep.max_energy_error <= 1e-8


def test_gradient_descent_approaches_first_eigvec(ring8, rng):
    """Projected descent on the penalty alone drives each basis vector to +/- psi_1."""
    fb = FilterBank.random(ring8, (1,), 1, 1, rng)
    ctx = RegContext.for_bank(fb)
    b = fb.basis[0].copy()
    for _ in range(3000):
        b -= 0.1 * 2 * np.einsum("upq,uq->up", ctx.stacked[0], b)
        b /= np.linalg.norm(b, axis=1, keepdims=True)
    psi = np.array([1 / np.sqrt(2), 0.5, 0.5])  # members (u, u+1, u-1) sorted; centre first on node 0
    for u in range(8):
        members = ring8.neighborhood(u, 1).members
        target = np.array([1 / np.sqrt(2) if m == u else 0.5 for m in members])
        assert abs(abs(b[u] @ target) - 1) < 1e-10
    assert psi @ psi == pytest.approx(1)
