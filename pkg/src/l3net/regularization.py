"""Local graph Laplacian penalty on L3Net basis filters and its strong-regularization limit."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import PreconditionError, StructuralError
from .graph import Graph, first_dirichlet_eigvec, has_boundary, is_connected_subgraph
from .layers import FilterBank


@dataclass
class RegContext:
    """Penalty weight plus the local Laplacians aligned with a filter bank's patches."""

    lam: float
    graph: Graph
    orders: tuple[int, ...]
    stacked: list = field(repr=False)

    @classmethod
    def for_bank(cls, fb: FilterBank, lam: float = 0.0) -> "RegContext":
        return cls.build(fb.graph, fb.orders, lam)

    @classmethod
    def build(cls, graph: Graph, orders, lam: float = 0.0) -> "RegContext":
        if lam < 0:
            raise ValueError(f"regularization weight must be non-negative, got {lam}")
        orders = tuple(orders)
        return cls(float(lam), graph, orders, [graph.stacked_laplacians(d) for d in orders])

    def laplacian(self, u: int, k: int):
        return self.graph.local_laplacian(u, self.orders[k])

    def check_alignment(self, fb: FilterBank):
        if fb.graph is not self.graph and fb.graph != self.graph:
            raise StructuralError("regularization context was built for a different graph")
        if fb.orders != self.orders:
            raise StructuralError(f"bank orders {fb.orders} differ from context orders {self.orders}")


def _quadratic(b: Tensor, L: np.ndarray) -> Tensor:
    Lb = np.einsum("upq,uq->up", L, b.value)
    return ad.custom_op(np.einsum("up,up->", b.value, Lb), (b,), lambda g: (2.0 * g * Lb,), "dirichlet_energy")


def reg_penalty(fb: FilterBank, ctx: RegContext) -> Tensor:
    """``sum_k sum_u b_u^(k)T L_u^(k) b_u^(k)`` with gradient ``2 L b`` per patch."""
    ctx.check_alignment(fb)
    total = None
    for k in range(fb.K):
        term = _quadratic(fb.basis_values(k), ctx.stacked[k])
        total = term if total is None else ad.add(total, term)
    return total


def objective(loss, fb, ctx) -> Tensor:
    """``loss + lam * R``. ``fb`` and ``ctx`` may be paired sequences for multi-layer models."""
    banks = fb if isinstance(fb, (list, tuple)) else [fb]
    ctxs = ctx if isinstance(ctx, (list, tuple)) else [ctx]
    if len(banks) != len(ctxs):
        raise StructuralError(f"{len(banks)} filter banks but {len(ctxs)} regularization contexts")
    out = ad.as_tensor(loss)
    for b, c in zip(banks, ctxs):
        if c.lam < 0:
            raise ValueError(f"regularization weight must be non-negative, got {c.lam}")
        if c.lam > 0:
            out = ad.add(out, ad.scale(reg_penalty(b, c), c.lam))
    return out


# -- strong regularization limit -------------------------------------------

@dataclass
class PatchLimit:
    u: int
    k: int
    lambda1: float
    alpha: float
    cosine: float
    sign_constant: bool
    energy: float
    minimizer: np.ndarray = field(repr=False)


@dataclass
class StrongRegReport:
    patches: list

    @property
    def min_cosine(self) -> float:
        return min(p.cosine for p in self.patches)

    @property
    def all_sign_constant(self) -> bool:
        return all(p.sign_constant for p in self.patches)

    @property
    def max_energy_error(self) -> float:
        """Largest ``|w^T L w - lambda_1 alpha^2|`` relative to ``lambda_1 alpha^2``."""
        return max(abs(p.energy - p.lambda1 * p.alpha ** 2) / (p.lambda1 * p.alpha ** 2) for p in self.patches)


def constrained_minimizer(L: np.ndarray, alpha: float, tol: float = 1e-15, max_iter: int = 2000) -> np.ndarray:
    """Minimize ``w^T L w`` subject to ``||w|| >= alpha`` for positive definite ``L``.

    The floor binds at the optimum, so the minimizer is ``alpha`` times the
    lowest eigenvector; it is found here by inverse iteration from the all-ones
    vector, independently of any dense eigensolver.
    """
    w = np.ones(L.shape[0]) / np.sqrt(L.shape[0])
    for _ in range(max_iter):
        nxt = np.linalg.solve(L, w)
        nxt /= np.linalg.norm(nxt)
        if np.linalg.norm(nxt - w) < tol:
            w = nxt
            break
        w = nxt
    return alpha * w


def verify_strong_reg_limit(g: Graph, orders, norm_floors=1.0) -> StrongRegReport:
    orders = tuple(orders)
    floors = np.broadcast_to(np.asarray(norm_floors, dtype=float), (g.n, len(orders)))
    if np.any(floors <= 0):
        raise ValueError("norm floors must be positive")
    patches = []
    for k, d in enumerate(orders):
        for u in range(g.n):
            members = g.neighborhood(u, d).members
            if not is_connected_subgraph(g, members):
                raise PreconditionError(f"patch (u={u}, k={k}) is not connected")
            if not has_boundary(g, members):
                raise PreconditionError(f"patch (u={u}, k={k}) has no boundary edge, so lambda_1 = 0")
            ll = g.local_laplacian(u, d)
            psi = first_dirichlet_eigvec(ll)
            alpha = float(floors[u, k])
            w = constrained_minimizer(ll.matrix, alpha)
            cos = abs(w @ psi) / (np.linalg.norm(w) * np.linalg.norm(psi))
            sign_const = bool(np.all(w > 0) or np.all(w < 0))
            patches.append(PatchLimit(u, k, float(ll.eigenvalues[0]), alpha, float(cos), sign_const,
                                      float(w @ ll.matrix @ w), w))
    return StrongRegReport(patches)
