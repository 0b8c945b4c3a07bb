"""Reductions of reference layers to L3Net, spectral expressiveness and stability bounds."""
from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as npcheb

from . import autodiff as ad
from .errors import InvalidGraphError, PreconditionError, StructuralError
from .graph import Graph, normalized_adjacency
from .layers import (ChebParams, EdgeNetParams, FilterBank, GATParams, _val, chebnet_forward,
                     l3net_forward)
from .regularization import RegContext


# -- reductions ------------------------------------------------------------

def _bank_from_dense(g: Graph, orders, dense, coeffs, bias) -> FilterBank:
    """Restrict dense ``B_k[u', u]`` matrices to the order-``d_k`` patches, failing on leaked support."""
    basis = []
    for d, B in zip(orders, dense):
        idx, mask = g.patch_index(d)
        inside = np.zeros_like(B, dtype=bool)
        inside[idx[mask], np.nonzero(mask)[0]] = True
        leak = np.abs(np.where(inside, 0.0, B)).max(initial=0.0)
        if leak > 1e-12 * max(1.0, np.abs(B).max(initial=0.0)):
            raise StructuralError(f"filter has support outside the order-{d} neighborhoods (|leak|={leak:.2e})")
        basis.append(np.where(mask, B[idx, np.arange(g.n)[:, None]], 0.0))
    bias = None if bias is None else np.array(_val(bias))
    return FilterBank(g, tuple(orders), basis, np.array(coeffs), bias)


def chebyshev_to_monomial(theta: np.ndarray, alpha=(-1.0, 1.0)) -> np.ndarray:
    """Coefficients ``beta`` with ``sum_l theta_l T_l(L~) = sum_m beta_m A_sym^m``.

    ``L~ = alpha_1 I + alpha_2 (I - A_sym) = s I + t A_sym`` with
    ``s = alpha_1 + alpha_2`` and ``t = -alpha_2``. ``theta`` is ``(L, ...)``.
    """
    theta = np.asarray(theta, dtype=float)
    L = theta.shape[0]
    flat = theta.reshape(L, -1)
    power = np.stack([npcheb.cheb2poly(flat[:, j]) for j in range(flat.shape[1])], axis=1)
    power = np.vstack([power, np.zeros((L - power.shape[0], power.shape[1]))])
    s, t = alpha[0] + alpha[1], -alpha[1]
    T = np.zeros((L, L))
    for j in range(L):
        for m in range(j + 1):
            T[m, j] = comb(j, m) * s ** (j - m) * t ** m
    return (T @ power).reshape(theta.shape)


def chebnet_to_l3net(cp: ChebParams, g: Graph) -> FilterBank:
    """Equivalent filter bank: ``B_k = A_sym^(k-1)`` on order ``k-1`` patches (GCN: diagonal + off-diagonal of A~)."""
    theta = np.array(_val(cp.theta))
    if cp.tied_gcn:
        At = normalized_adjacency(g, "sym_selfloop").matrix
        diag = np.diag(np.diag(At))
        return _bank_from_dense(g, (0, 1), [diag, At - diag], np.concatenate([theta, theta]), cp.bias)
    A = normalized_adjacency(g, "sym").matrix
    beta = chebyshev_to_monomial(theta, cp.alpha)
    dense, P = [], np.eye(g.n)
    for _ in range(cp.L):
        dense.append(P)
        P = P @ A
    return _bank_from_dense(g, tuple(range(cp.L)), dense, beta, cp.bias)


def gat_to_l3net(attention: np.ndarray, gp: GATParams) -> FilterBank:
    """Bank reproducing :func:`gat_forward` at the input the attention rows were frozen at.

    ``attention`` is ``(R, n, p1)`` (one sample of :func:`gat_attention`); row ``u``
    of head ``r`` becomes ``b_u^(r)`` and the head mixing becomes ``a_r``.
    """
    attention = np.asarray(attention, dtype=float)
    _, mask = gp.graph.patch_index(1)
    if attention.shape != (gp.R,) + mask.shape:
        raise StructuralError(f"attention shape {attention.shape} does not match {gp.R} heads over {mask.shape}")
    basis = [np.where(mask, attention[r], 0.0) for r in range(gp.R)]
    bias = None if gp.bias is None else np.array(_val(gp.bias))
    return FilterBank(gp.graph, (1,) * gp.R, basis, gp.effective_theta(), bias)


def edgenet_to_l3net(ep: EdgeNetParams) -> FilterBank:
    """``B_k`` from the running product ``Phi_(k-1) ... Phi_0`` with ``d_k = k - 1``."""
    dense, P = [], None
    for r in range(ep.L):
        Phi = ep.dense_phi(r)
        P = Phi if P is None else Phi @ P
        dense.append(P.T)
    return _bank_from_dense(ep.graph, tuple(range(ep.L)), dense, np.array(_val(ep.thetas)), ep.bias)


# -- spectral expressiveness -------------------------------------------------

def spectral_residual(g: Graph, B: np.ndarray, mode: str = "sym") -> tuple[float, np.ndarray]:
    """``min_f ||f(A) - B||_F`` over polynomials of degree < n (all spectral filters).

    Returns the residual and least-norm monomial coefficients.
    """
    A = normalized_adjacency(g, mode).matrix
    cols, P = [], np.eye(g.n)
    for _ in range(g.n):
        cols.append(P.ravel())
        P = P @ A
    V = np.stack(cols, axis=1)
    coeffs, *_ = np.linalg.lstsq(V, np.asarray(B, dtype=float).ravel(), rcond=None)
    return float(np.linalg.norm(V @ coeffs - np.asarray(B).ravel())), coeffs


def ring_difference_filter(n: int) -> np.ndarray:
    """``B[u, u] = 1``, ``B[u + 1, u] = -1`` on a ring."""
    B = np.eye(n)
    for u in range(n):
        B[(u + 1) % n, u] = -1.0
    return B


def ring_difference_bank(g: Graph, in_channels: int = 1, out_channels: int = 1) -> FilterBank:
    """K=1 order-1 bank holding the ring difference filter with identity channel mixing."""
    if g.kind != "ring":
        raise InvalidGraphError("the difference filter bank is defined on a ring")
    coeffs = np.zeros((1, in_channels, out_channels))
    coeffs[0, :, :] = np.eye(in_channels, out_channels)
    fb = _bank_from_dense(g, (1,), [ring_difference_filter(g.n)], coeffs, None)
    return fb


def mirror_flip_permutation(g: Graph, u: int) -> np.ndarray:
    """``perm[u + v] = u - v (mod n)``; verified to preserve the ring adjacency."""
    if g.kind != "ring":
        raise InvalidGraphError(f"mirror flip needs a ring, got {g.kind!r}")
    n = g.n
    perm = (2 * u - np.arange(n)) % n
    A = g.adjacency_matrix()
    if not np.array_equal(permute_matrix(A, perm), A):
        raise StructuralError("mirror flip does not preserve the adjacency")
    return perm


def permutation_matrix(perm: np.ndarray) -> np.ndarray:
    """``P[perm[i], i] = 1`` so that ``(P x)[perm[i]] = x[i]``."""
    n = len(perm)
    P = np.zeros((n, n))
    P[perm, np.arange(n)] = 1.0
    return P


def permute_matrix(A: np.ndarray, perm: np.ndarray) -> np.ndarray:
    P = permutation_matrix(perm)
    return P @ A @ P.T


def permute_signal(X: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Node permutation along axis -2."""
    out = np.empty_like(X)
    out[..., perm, :] = X
    return out


def permute_graph(g: Graph, perm: np.ndarray) -> Graph:
    return Graph(g.n, [(perm[i], perm[j]) for i, j in g.edges], kind=g.kind, grid_shape=g.grid_shape)


def cheb_layer(cp: ChebParams) -> Callable[[np.ndarray, Graph], np.ndarray]:
    """``F[A]`` for :func:`equivariance_check`: operators rebuilt from the graph passed in."""
    mode = "sym_selfloop" if cp.tied_gcn else "sym"
    return lambda X, g: chebnet_forward(X, cp, normalized_adjacency(g, mode)).value


def l3net_layer(fb: FilterBank) -> Callable[[np.ndarray, Graph], np.ndarray]:
    """L3Net filters are attached to node ids, so the graph argument is ignored."""
    return lambda X, g: l3net_forward(X, fb).value


def equivariance_check(layer: Callable[[np.ndarray, Graph], np.ndarray], g: Graph, trials: int = 100,
                       channels: int = 1, rng: np.random.Generator | None = None,
                       perms=None) -> float:
    """``max ||F[A_pi] pi x - pi F[A] x||`` over random signals and permutations.

    ``perms`` fixes the permutation list (cycled); otherwise uniform random ones are drawn.
    """
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t in range(trials):
        perm = perms[t % len(perms)] if perms is not None else rng.permutation(g.n)
        x = rng.standard_normal((1, g.n, channels))
        lhs = layer(permute_signal(x, perm), permute_graph(g, perm))
        rhs = permute_signal(layer(x, g), perm)
        worst = max(worst, float(np.linalg.norm(lhs - rhs)))
    return worst


# -- stability ---------------------------------------------------------------

@dataclass
class StabilityReport:
    beta1: float
    Kp: int
    a_norm: float
    beta2: float | None = None
    rho: float | None = None
    empirical_max_ratio: float | None = None

    @property
    def bound1(self) -> float:
        return self.beta1 * self.a_norm * np.sqrt(self.Kp)

    @property
    def bound2(self) -> float | None:
        if self.rho is None or self.beta2 is None:
            return None
        return self.rho * self.beta2 * self.a_norm * np.sqrt(self.Kp)


def _check_positive_definite(ctx: RegContext):
    for k, d in enumerate(ctx.orders):
        for u in range(ctx.graph.n):
            lam1 = ctx.graph.local_laplacian(u, d).eigenvalues[0]
            if lam1 <= 1e-12:
                raise PreconditionError(f"local Laplacian (u={u}, k={k}) is singular (lambda_1={lam1:.2e})")


def rho_per_patch(ctx: RegContext, delta_x: np.ndarray) -> np.ndarray:
    """``sqrt(dx^T L^-1 dx) / ||dx||`` on every patch, maximized over leading batch and channel axes.

    ``delta_x`` is ``(n,)``, ``(n, C)`` or ``(B, n, C)``. Returns ``(K, n)``; 0/0 counts as 0.
    """
    _check_positive_definite(ctx)
    dx = np.asarray(delta_x, dtype=float)
    if dx.ndim == 1:
        dx = dx[None, :, None]
    elif dx.ndim == 2:
        dx = dx[None]
    out = np.zeros((len(ctx.orders), ctx.graph.n))
    for k, d in enumerate(ctx.orders):
        for u in range(ctx.graph.n):
            ll = ctx.graph.local_laplacian(u, d)
            patch = dx[:, list(ll.neighborhood.members), :]
            coef = np.einsum("pq,bpc->bqc", ll.eigenvectors, patch)
            num = np.einsum("bqc,q->bc", coef ** 2, 1.0 / ll.eigenvalues)
            den = np.einsum("bpc->bc", patch ** 2)
            ratio = np.sqrt(np.divide(num, den, out=np.zeros_like(num), where=den > 0))
            out[k, u] = ratio.max()
    return out


def stability_constants(fb: FilterBank, ctx: RegContext | None = None, delta_x=None) -> StabilityReport:
    fb = fb.detached()
    beta1, beta2 = 0.0, None
    for k in range(fb.K):
        vals = fb.basis_values(k).value
        beta1 = max(beta1, float(np.sqrt((vals ** 2).sum(axis=1)).max()))
    sizes = sum(fb.patch(k)[1].sum(axis=1) for k in range(fb.K))
    Kp = int(np.max(sizes))
    a_norm = float(np.linalg.norm(_val(fb.coeffs)))
    rho = None
    if ctx is not None:
        ctx.check_alignment(fb)
        _check_positive_definite(ctx)
        beta2 = 0.0
        for k in range(fb.K):
            b = fb.basis_values(k).value
            energy = np.einsum("up,upq,uq->u", b, ctx.stacked[k], b)
            beta2 = max(beta2, float(np.sqrt(np.maximum(energy, 0.0)).max()))
        if delta_x is not None:
            rho = float(rho_per_patch(ctx, delta_x).max())
    elif delta_x is not None:
        raise PreconditionError("rho needs the local Laplacians (pass a RegContext)")
    return StabilityReport(beta1=beta1, Kp=Kp, a_norm=a_norm, beta2=beta2, rho=rho)


@dataclass
class BoundCheck:
    max_ratio: float
    bound: float
    violations: int
    trials: int

    @property
    def slack(self) -> float:
        return self.bound / self.max_ratio if self.max_ratio > 0 else float("inf")


def _output_ratios(fb: FilterBank, X: np.ndarray, dX: np.ndarray, activation) -> np.ndarray:
    Y0 = l3net_forward(X, fb, activation).value
    Y1 = l3net_forward(X + dX, fb, activation).value
    num = np.sqrt(((Y1 - Y0) ** 2).sum(axis=(1, 2)))
    den = np.sqrt((dX ** 2).sum(axis=(1, 2)))
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def _random_pairs(fb: FilterBank, trials: int, rng: np.random.Generator):
    shape = (trials, fb.graph.n, fb.in_channels)
    X = rng.standard_normal(shape)
    scale = np.exp(rng.uniform(np.log(1e-3), np.log(10.0), (trials, 1, 1)))
    return X, rng.standard_normal(shape) * scale


def verify_theorem1(fb: FilterBank, trials: int = 1000, activation="relu",
                    rng: np.random.Generator | None = None, X=None, dX=None) -> BoundCheck:
    """Monte-Carlo check of ``||dY|| <= beta1 ||a|| sqrt(Kp) ||dX||``."""
    fb = fb.detached()
    rng = rng or np.random.default_rng(0)
    if X is None or dX is None:
        X, dX = _random_pairs(fb, trials, rng)
    ratios = _output_ratios(fb, np.asarray(X, float), np.asarray(dX, float), activation)
    bound = stability_constants(fb).bound1
    return BoundCheck(float(ratios.max()), bound, int(np.sum(ratios > bound * (1 + 1e-12))), len(ratios))


def smooth_perturbations(g: Graph, trials: int, channels: int, rng: np.random.Generator,
                         fraction: float = 0.125) -> np.ndarray:
    """Random combinations of the lowest-frequency eigenvectors of the full graph Laplacian."""
    L = np.diag(g.degree.astype(float)) - g.adjacency_matrix()
    _, vecs = np.linalg.eigh(L)
    m = max(1, int(np.ceil(fraction * g.n)))
    coef = rng.standard_normal((trials, m, channels))
    return np.einsum("nm,tmc->tnc", vecs[:, :m], coef)


@dataclass
class Theorem2Check:
    family: str
    max_ratio: float
    rho: float
    beta1: float
    beta2: float
    bound1: float
    bound2: float
    violations: int
    trials: int

    @property
    def improves(self) -> bool:
        """Whether ``rho beta2 < beta1`` (the energy-norm bound is the sharper one)."""
        return self.rho * self.beta2 < self.beta1


def verify_theorem2(fb: FilterBank, ctx: RegContext, families=("white", "smooth"), trials: int = 1000,
                    activation="relu", rng: np.random.Generator | None = None) -> dict[str, Theorem2Check]:
    """Monte-Carlo check of ``||dY|| <= rho beta2 ||a|| sqrt(Kp) ||dX||`` per perturbation family.

    Each trial is checked against the bound with its own ``rho``; the reported
    ``rho`` and ``bound2`` are the worst case over the family.
    """
    fb = fb.detached()
    rng = rng or np.random.default_rng(0)
    rep = stability_constants(fb, ctx)
    scale = rep.a_norm * np.sqrt(rep.Kp)
    out = {}
    for fam in families:
        X = rng.standard_normal((trials, fb.graph.n, fb.in_channels))
        if fam == "white":
            dX = rng.standard_normal(X.shape)
        elif fam == "smooth":
            dX = smooth_perturbations(fb.graph, trials, fb.in_channels, rng)
        elif callable(fam):
            dX = fam(rng, X.shape)
            fam = getattr(fam, "__name__", "custom")
        else:
            raise ValueError(f"unknown perturbation family {fam!r}")
        ratios = _output_ratios(fb, X, dX, activation)
        rhos = np.array([rho_per_patch(ctx, dX[t]).max() for t in range(trials)])
        viol = int(np.sum(ratios > rhos * rep.beta2 * scale * (1 + 1e-12)))
        rho = float(rhos.max())
        out[fam] = Theorem2Check(fam, float(ratios.max()), rho, rep.beta1, rep.beta2, rep.bound1,
                                 rho * rep.beta2 * scale, viol, trials)
    return out


def random_bank(g: Graph, orders, in_channels: int, out_channels: int, rng: np.random.Generator) -> FilterBank:
    fb = FilterBank.random(g, orders, in_channels, out_channels, rng)
    fb.bias = rng.standard_normal(out_channels) * 0.1
    return fb


def as_filter_bank(x) -> FilterBank:
    return x if isinstance(x, FilterBank) else x.bank


def dense_filter(fb: FilterBank, k: int = 0) -> np.ndarray:
    return fb.dense_basis(k)


__all__ = [
    "BoundCheck", "StabilityReport", "Theorem2Check", "chebnet_to_l3net", "chebyshev_to_monomial",
    "edgenet_to_l3net", "equivariance_check", "gat_to_l3net", "mirror_flip_permutation",
    "permute_graph", "permute_signal", "ring_difference_bank", "ring_difference_filter",
    "rho_per_patch", "smooth_perturbations", "spectral_residual", "stability_constants",
    "verify_theorem1", "verify_theorem2", "ad",
]
