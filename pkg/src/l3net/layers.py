"""Graph convolution layers sharing one forward contract.

Signals are ``(batch, nodes, channels)``. The L3Net layer computes

    Y(u, c) = act( sum_k sum_{u' in N_u^(d_k)} sum_c' a_k(c', c) B_k(u', u) X(u', c') + bias(c) )

with per-node basis vectors ``b_u^(k)(u') = B_k(u', u)`` stored in the
canonical (ascending) member order of each neighborhood. ChebNet, GCN, GAT and
EdgeNet reference layers are provided so reductions can be checked
output-to-output.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError, StructuralError
from .graph import Graph, NormalizedAdjacency, normalized_adjacency, ring_offsets


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=float)


def _check_signal(X: Tensor, n: int, channels: int, who: str):
    if X.ndim != 3:
        raise ShapeError(f"{who}: signal must be (batch, nodes, channels), got {X.shape}")
    if X.shape[1] != n:
        raise StructuralError(f"{who}: signal has {X.shape[1]} nodes, layer graph has {n}")
    if X.shape[2] != channels:
        raise ShapeError(f"{who}: signal has {X.shape[2]} channels, layer expects {channels}")


def local_apply(X, idx: np.ndarray, weights) -> Tensor:
    """``Z(b, u, c) = sum_j weights[u, j] * X(b, idx[u, j], c)``."""
    return ad.einsum("bupc,up->buc", ad.gather_patch(X, idx), weights)


def _mix(Z, coeff) -> Tensor:
    return ad.matmul(Z, coeff)


def _add_bias(Y, bias):
    return Y if bias is None else ad.add(Y, bias)


# -- L3Net ---------------------------------------------------------------

@dataclass
class FilterBank:
    """Parameters of one L3Net layer.

    ``basis[k]`` is an ``(n, pmax_k)`` array padded along the member axis (see
    :meth:`Graph.patch_index`), or, with ``shared_basis``, a template of length
    ``2 d_k + 1`` indexed by the signed offset ``u' - u`` on a ring or chain.
    Entries may be numpy arrays or :class:`Tensor` parameters.
    """

    graph: Graph
    orders: tuple[int, ...]
    basis: list
    coeffs: object
    bias: object = None
    shared_basis: bool = False
    _offset_index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.orders = tuple(int(d) for d in self.orders)
        if len(self.basis) != len(self.orders):
            raise StructuralError(f"{len(self.basis)} basis arrays for {len(self.orders)} orders")
        if _val(self.coeffs).ndim != 3 or _val(self.coeffs).shape[0] != self.K:
            raise ShapeError(f"coeffs must be (K, C', C) with K={self.K}, got {_val(self.coeffs).shape}")
        for k, d in enumerate(self.orders):
            shape = _val(self.basis[k]).shape
            expect = (2 * d + 1,) if self.shared_basis else self.graph.patch_index(d)[0].shape
            if shape != expect:
                raise StructuralError(f"basis {k} (order {d}) has shape {shape}, expected {expect}")
        if self.bias is not None and _val(self.bias).shape != (self.out_channels,):
            raise ShapeError(f"bias must have shape ({self.out_channels},), got {_val(self.bias).shape}")

    @property
    def K(self) -> int:
        return len(self.orders)

    @property
    def in_channels(self) -> int:
        return _val(self.coeffs).shape[1]

    @property
    def out_channels(self) -> int:
        return _val(self.coeffs).shape[2]

    def patch(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.graph.patch_index(self.orders[k])

    def _template_index(self, k: int) -> np.ndarray:
        d = self.orders[k]
        if d not in self._offset_index:
            off = ring_offsets(self.graph, d)
            if np.abs(off).max(initial=0) > d:
                raise StructuralError(f"order {d} patches wrap around a ring of {self.graph.n} nodes")
            self._offset_index[d] = off + d
        return self._offset_index[d]

    def basis_values(self, k: int) -> Tensor:
        """Padded per-node basis ``(n, pmax)`` as a tensor, zero on padding."""
        _, mask = self.patch(k)
        b = self.basis[k]
        if self.shared_basis:
            b = ad.take(b, self._template_index(k))
        return ad.mul(b, mask.astype(float))

    def basis_vector(self, k: int, u: int) -> np.ndarray:
        """``b_u^(k)`` over N_u^(d_k) in canonical order."""
        _, mask = self.patch(k)
        return self.basis_values(k).value[u, mask[u]]

    def dense_basis(self, k: int) -> np.ndarray:
        """``B_k`` as an ``n x n`` matrix with ``B[u', u] = b_u^(k)(u')``."""
        idx, mask = self.patch(k)
        vals = self.basis_values(k).value
        B = np.zeros((self.graph.n, self.graph.n))
        rows, cols = idx[mask], np.nonzero(mask)[0]
        B[rows, cols] = vals[mask]
        return B

    def num_parameters(self) -> int:
        if self.shared_basis:
            nb = sum(2 * d + 1 for d in self.orders)
        else:
            nb = sum(int(self.graph.patch_index(d)[1].sum()) for d in self.orders)
        nbias = 0 if self.bias is None else self.out_channels
        return self.K * self.in_channels * self.out_channels + nb + nbias

    def parameters(self) -> list:
        out = list(self.basis) + [self.coeffs]
        return out + ([self.bias] if self.bias is not None else [])

    def detached(self) -> "FilterBank":
        """Copy with plain numpy arrays in place of tensors."""
        return FilterBank(self.graph, self.orders, [np.array(_val(b)) for b in self.basis],
                          np.array(_val(self.coeffs)),
                          None if self.bias is None else np.array(_val(self.bias)),
                          self.shared_basis)

    def as_parameters(self) -> "FilterBank":
        """Copy whose arrays are trainable tensors."""
        fb = self.detached()
        return FilterBank(fb.graph, fb.orders, [ad.parameter(b) for b in fb.basis], ad.parameter(fb.coeffs),
                          None if fb.bias is None else ad.parameter(fb.bias), fb.shared_basis)

    @classmethod
    def random(cls, graph: Graph, orders, in_channels: int, out_channels: int,
               rng: np.random.Generator, shared_basis: bool = False, bias: bool = True) -> "FilterBank":
        """Uniform init: basis scale ``|N|^-1/2``, coefficient scale ``(K C')^-1/2``, zero bias."""
        orders = tuple(orders)
        K = len(orders)
        basis = []
        for d in orders:
            if shared_basis:
                s = (2 * d + 1) ** -0.5
                basis.append(rng.uniform(-s, s, 2 * d + 1))
            else:
                _, mask = graph.patch_index(d)
                s = 1.0 / np.sqrt(mask.sum(axis=1, keepdims=True))
                basis.append(np.where(mask, rng.uniform(-1.0, 1.0, mask.shape) * s, 0.0))
        t = (K * in_channels) ** -0.5
        coeffs = rng.uniform(-t, t, (K, in_channels, out_channels))
        return cls(graph, orders, basis, coeffs, np.zeros(out_channels) if bias else None, shared_basis)


def l3net_forward(X, fb: FilterBank, activation="identity") -> Tensor:
    X = ad.as_tensor(X)
    _check_signal(X, fb.graph.n, fb.in_channels, "l3net_forward")
    Y = None
    for k in range(fb.K):
        idx, _ = fb.patch(k)
        Z = local_apply(X, idx, fb.basis_values(k))
        T = _mix(Z, ad.index0(fb.coeffs, k))
        Y = T if Y is None else ad.add(Y, T)
    return ad.activation(activation)(_add_bias(Y, fb.bias))


def assemble_dense_M(fb: FilterBank) -> np.ndarray:
    """``M`` as an ``(n C') x (n C)`` matrix indexed ``[u' C' + c', u C + c]``.

    A flattened signal row ``x`` maps to ``x @ M`` (before bias and activation).
    """
    a = _val(fb.coeffs)
    return sum(np.kron(fb.dense_basis(k), a[k]) for k in range(fb.K))


# -- ChebNet / GCN ---------------------------------------------------------

@dataclass
class ChebParams:
    """Chebyshev filter coefficients ``theta`` of shape ``(L, C', C)``.

    With ``tied_gcn`` the layer is ``Y = A_tilde X theta[0]`` where ``A_tilde`` is
    the self-loop normalized adjacency.
    """

    theta: object
    alpha: tuple[float, float] = (-1.0, 1.0)
    tied_gcn: bool = False
    bias: object = None

    def __post_init__(self):
        th = _val(self.theta)
        if th.ndim != 3:
            raise ShapeError(f"theta must be (L, C', C), got {th.shape}")
        if self.tied_gcn and th.shape[0] != 1:
            raise ShapeError("tied GCN keeps one coefficient matrix, theta must be (1, C', C)")

    @property
    def L(self) -> int:
        return 2 if self.tied_gcn else _val(self.theta).shape[0]

    @property
    def in_channels(self) -> int:
        return _val(self.theta).shape[1]

    @property
    def out_channels(self) -> int:
        return _val(self.theta).shape[2]

    def num_parameters(self) -> int:
        nbias = 0 if self.bias is None else self.out_channels
        return _val(self.theta).shape[0] * self.in_channels * self.out_channels + nbias

    def parameters(self) -> list:
        return [self.theta] + ([self.bias] if self.bias is not None else [])

    @classmethod
    def random(cls, L: int, in_channels: int, out_channels: int, rng: np.random.Generator,
               tied_gcn: bool = False, bias: bool = True) -> "ChebParams":
        nl = 1 if tied_gcn else L
        t = (nl * in_channels) ** -0.5
        return cls(rng.uniform(-t, t, (nl, in_channels, out_channels)), tied_gcn=tied_gcn,
                   bias=np.zeros(out_channels) if bias else None)


def rescaled_laplacian(adjacency: NormalizedAdjacency, alpha=(-1.0, 1.0)) -> np.ndarray:
    """``alpha_1 I + alpha_2 (I - A_sym)``."""
    n = adjacency.matrix.shape[0]
    return alpha[0] * np.eye(n) + alpha[1] * (np.eye(n) - adjacency.matrix)


def chebnet_forward(X, cp: ChebParams, adjacency: NormalizedAdjacency, activation="identity") -> Tensor:
    X = ad.as_tensor(X)
    n = adjacency.matrix.shape[0]
    _check_signal(X, n, cp.in_channels, "chebnet_forward")
    if cp.tied_gcn:
        if adjacency.mode != "sym_selfloop":
            raise StructuralError(f"GCN needs the sym_selfloop adjacency, got {adjacency.mode!r}")
        Y = _mix(ad.propagate(adjacency.matrix, X), ad.index0(cp.theta, 0))
        return ad.activation(activation)(_add_bias(Y, cp.bias))
    if adjacency.mode != "sym":
        raise StructuralError(f"ChebNet needs the sym adjacency, got {adjacency.mode!r}")
    Lt = rescaled_laplacian(adjacency, cp.alpha)
    T_prev, T_cur = X, None
    Y = _mix(X, ad.index0(cp.theta, 0))
    for l in range(1, cp.L):
        if l == 1:
            T_cur = ad.propagate(Lt, X)
        else:
            T_prev, T_cur = T_cur, ad.sub(ad.propagate(2.0 * Lt, T_cur), T_prev)
        Y = ad.add(Y, _mix(T_cur, ad.index0(cp.theta, l)))
    return ad.activation(activation)(_add_bias(Y, cp.bias))


# -- GAT -------------------------------------------------------------------

@dataclass
class GATParams:
    """Multi-head attention over order-1 neighborhoods.

    ``W``: ``(R, C', C0)``; ``att``: ``(R, 2 C0)``. With ``theta`` of shape
    ``(R, C', C)`` the heads are mixed freely (``Y = sum_r A_r X theta_r``);
    with ``theta=None`` head outputs ``A_r X W_r`` are concatenated (C = R C0).
    """

    graph: Graph
    W: object
    att: object
    theta: object = None
    bias: object = None
    leaky_slope: float = 0.2

    def __post_init__(self):
        W, a = _val(self.W), _val(self.att)
        if W.ndim != 3 or a.shape != (W.shape[0], 2 * W.shape[2]):
            raise ShapeError(f"attention shapes W {W.shape}, att {a.shape} are inconsistent")
        if self.theta is not None and _val(self.theta).shape[:2] != W.shape[:2]:
            raise ShapeError(f"theta {_val(self.theta).shape} does not match W {W.shape}")

    @property
    def R(self) -> int:
        return _val(self.W).shape[0]

    @property
    def in_channels(self) -> int:
        return _val(self.W).shape[1]

    @property
    def head_channels(self) -> int:
        return _val(self.W).shape[2]

    @property
    def out_channels(self) -> int:
        if self.theta is None:
            return self.R * self.head_channels
        return _val(self.theta).shape[2]

    def effective_theta(self) -> np.ndarray:
        """Per-head mixing ``(R, C', C)``; for concatenated heads ``W_r`` placed in block ``r``."""
        if self.theta is not None:
            return np.array(_val(self.theta))
        W = _val(self.W)
        R, Cin, C0 = W.shape
        out = np.zeros((R, Cin, R * C0))
        for r in range(R):
            out[r, :, r * C0:(r + 1) * C0] = W[r]
        return out

    def num_parameters(self) -> int:
        n = _val(self.W).size + _val(self.att).size
        n += 0 if self.theta is None else _val(self.theta).size
        return n + (0 if self.bias is None else self.out_channels)

    def parameters(self) -> list:
        out = [self.W, self.att] + ([self.theta] if self.theta is not None else [])
        return out + ([self.bias] if self.bias is not None else [])

    @classmethod
    def random(cls, graph: Graph, heads: int, in_channels: int, out_channels: int,
               rng: np.random.Generator, head_channels: int | None = None, concat: bool = False,
               bias: bool = True) -> "GATParams":
        if concat:
            if out_channels % heads:
                raise ShapeError(f"{out_channels} output channels do not split over {heads} heads")
            head_channels = out_channels // heads
        head_channels = head_channels or out_channels
        s = in_channels ** -0.5
        W = rng.uniform(-s, s, (heads, in_channels, head_channels))
        att = rng.uniform(-1, 1, (heads, 2 * head_channels)) * (2 * head_channels) ** -0.5
        theta = None
        if not concat:
            t = (heads * in_channels) ** -0.5
            theta = rng.uniform(-t, t, (heads, in_channels, out_channels))
        return cls(graph, W, att, theta, np.zeros(out_channels) if bias else None)


def _gat_heads(X: Tensor, gp: GATParams):
    idx, mask = gp.graph.patch_index(1)
    B, n, _ = X.shape
    C0 = gp.head_channels
    eye, zero = np.eye(C0), np.zeros((C0, C0))
    select = (np.vstack([eye, zero]), np.vstack([zero, eye]))
    for r in range(gp.R):
        W_r = ad.index0(gp.W, r)
        a_r = ad.index0(gp.att, r)
        H = ad.einsum("buc,ce->bue", X, W_r)
        src = ad.einsum("bue,e->bu", H, ad.matmul(a_r, select[0]))
        dst = ad.einsum("bue,e->bu", H, ad.matmul(a_r, select[1]))
        dst_nb = ad.reshape(ad.gather_patch(ad.reshape(dst, (B, n, 1)), idx), (B, n, idx.shape[1]))
        logits = ad.leaky_relu(ad.add(ad.reshape(src, (B, n, 1)), dst_nb), gp.leaky_slope)
        yield r, H, ad.neighborhood_softmax(logits, mask)


def gat_attention(X, gp: GATParams) -> np.ndarray:
    """Attention rows ``(B, R, n, p1)`` over the padded order-1 patches."""
    X = ad.as_tensor(X)
    _check_signal(X, gp.graph.n, gp.in_channels, "gat_attention")
    return np.stack([A.value for _, _, A in _gat_heads(X, gp)], axis=1)


def gat_forward(X, gp: GATParams, activation="identity") -> Tensor:
    X = ad.as_tensor(X)
    _check_signal(X, gp.graph.n, gp.in_channels, "gat_forward")
    idx, _ = gp.graph.patch_index(1)
    outs = []
    for r, H, A in _gat_heads(X, gp):
        if gp.theta is None:
            outs.append(ad.einsum("bup,bupe->bue", A, ad.gather_patch(H, idx)))
        else:
            agg = ad.einsum("bup,bupc->buc", A, ad.gather_patch(X, idx))
            outs.append(_mix(agg, ad.index0(gp.theta, r)))
    if gp.theta is None:
        Y = ad.concat(outs, axis=-1)
    else:
        Y = outs[0]
        for o in outs[1:]:
            Y = ad.add(Y, o)
    return ad.activation(activation)(_add_bias(Y, gp.bias))


# -- EdgeNet ---------------------------------------------------------------

@dataclass
class EdgeNetParams:
    """Edge-varying filters: ``phi0`` (n,) diagonal, ``phis[r]`` (n, p1) order-1 rows, ``thetas`` (L, C', C)."""

    graph: Graph
    phi0: object
    phis: list
    thetas: object
    bias: object = None

    def __post_init__(self):
        n = self.graph.n
        p1 = self.graph.patch_index(1)[0].shape
        if _val(self.phi0).shape != (n,):
            raise ShapeError(f"phi0 must have shape ({n},), got {_val(self.phi0).shape}")
        for r, ph in enumerate(self.phis, 1):
            if _val(ph).shape != p1:
                raise StructuralError(f"phi_{r} must have the order-1 patch shape {p1}, got {_val(ph).shape}")
        if _val(self.thetas).shape[0] != self.L:
            raise ShapeError(f"{_val(self.thetas).shape[0]} mixing matrices for L={self.L} taps")

    @property
    def L(self) -> int:
        return 1 + len(self.phis)

    @property
    def in_channels(self) -> int:
        return _val(self.thetas).shape[1]

    @property
    def out_channels(self) -> int:
        return _val(self.thetas).shape[2]

    def num_parameters(self) -> int:
        _, mask = self.graph.patch_index(1)
        n = _val(self.thetas).size + self.graph.n + len(self.phis) * int(mask.sum())
        return n + (0 if self.bias is None else self.out_channels)

    def parameters(self) -> list:
        out = [self.phi0] + list(self.phis) + [self.thetas]
        return out + ([self.bias] if self.bias is not None else [])

    def dense_phi(self, r: int) -> np.ndarray:
        """``Phi_r`` as ``n x n`` with ``Phi[u, v]`` the weight of ``v`` in node ``u``'s row."""
        n = self.graph.n
        if r == 0:
            return np.diag(_val(self.phi0))
        idx, mask = self.graph.patch_index(1)
        P = np.zeros((n, n))
        P[np.nonzero(mask)[0], idx[mask]] = _val(self.phis[r - 1])[mask]
        return P

    @classmethod
    def random(cls, graph: Graph, L: int, in_channels: int, out_channels: int,
               rng: np.random.Generator, bias: bool = True) -> "EdgeNetParams":
        _, mask = graph.patch_index(1)
        s = 1.0 / np.sqrt(mask.sum(axis=1, keepdims=True))
        phis = [np.where(mask, rng.uniform(-1, 1, mask.shape) * s, 0.0) for _ in range(L - 1)]
        t = (L * in_channels) ** -0.5
        return cls(graph, rng.uniform(-1, 1, graph.n), phis,
                   rng.uniform(-t, t, (L, in_channels, out_channels)),
                   np.zeros(out_channels) if bias else None)


def edgenet_forward(X, ep: EdgeNetParams, activation="identity") -> Tensor:
    X = ad.as_tensor(X)
    _check_signal(X, ep.graph.n, ep.in_channels, "edgenet_forward")
    idx, mask = ep.graph.patch_index(1)
    S = ad.mul(X, ad.reshape(ep.phi0, (1, ep.graph.n, 1)))
    Y = _mix(S, ad.index0(ep.thetas, 0))
    for r, ph in enumerate(ep.phis, 1):
        S = local_apply(S, idx, ad.mul(ph, mask.astype(float)))
        Y = ad.add(Y, _mix(S, ad.index0(ep.thetas, r)))
    return ad.activation(activation)(_add_bias(Y, ep.bias))


# -- parameter-count formulas (model complexity table) ---------------------

def l3net_param_formula(K: int, C_in: int, C_out: int, n: int, p: float) -> float:
    return K * (C_in * C_out + n * p)


def chebnet_param_formula(L: int, C_in: int, C_out: int) -> int:
    return L * C_in * C_out


def gat_param_formula(R: int, C_in: int, C_out: int) -> int:
    return R * (C_in * C_out + 2 * C_out)


def edgenet_param_formula(L: int, C_in: int, C_out: int, n: int, p1: float) -> float:
    return L * (C_in * C_out + n * p1)


def cheb_adjacency(graph: Graph, tied_gcn: bool = False) -> NormalizedAdjacency:
    return normalized_adjacency(graph, "sym_selfloop" if tied_gcn else "sym")
