"""Undirected graphs, neighborhoods, normalized adjacency and local Dirichlet Laplacians."""
from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import DegreeZeroError, InvalidGraphError, MultiplicityError, NumericError

ADJACENCY_MODES = ("raw", "sym", "sym_selfloop")


class Graph:
    """Immutable undirected graph without self-loops.

    Derived structures (neighborhoods, padded patch indices, local
    Laplacians) are computed lazily and cached on the instance.
    """

    def __init__(self, n: int, edges: Iterable[tuple[int, int]], kind: str = "custom",
                 grid_shape: tuple[int, int] | None = None):
        if n < 1:
            raise InvalidGraphError(f"graph needs at least one node, got n={n}")
        canon = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidGraphError(f"edge ({i}, {j}) out of range for n={n}")
            if i == j:
                raise InvalidGraphError(f"self-loop at node {i}")
            canon.add((min(i, j), max(i, j)))
        self._n = int(n)
        self._edges = tuple(sorted(canon))
        self.kind = kind
        self.grid_shape = grid_shape
        adj = [[] for _ in range(n)]
        for i, j in self._edges:
            adj[i].append(j)
            adj[j].append(i)
        self._adj = tuple(tuple(sorted(a)) for a in adj)
        self._degree = np.array([len(a) for a in adj], dtype=np.int64)
        self._degree.flags.writeable = False
        self._cache: dict = {}

    @property
    def n(self) -> int:
        return self._n

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return self._edges

    @property
    def degree(self) -> np.ndarray:
        return self._degree

    def neighbors(self, u: int) -> tuple[int, ...]:
        return self._adj[u]

    def adjacency_matrix(self) -> np.ndarray:
        A = np.zeros((self._n, self._n))
        for i, j in self._edges:
            A[i, j] = A[j, i] = 1.0
        return A

    def __repr__(self):
        return f"Graph(kind={self.kind!r}, n={self._n}, edges={len(self._edges)})"

    def __eq__(self, other):
        return isinstance(other, Graph) and self._n == other._n and self._edges == other._edges

    def __hash__(self):
        return hash((self._n, self._edges))

    # -- serialization -------------------------------------------------
    def to_text(self) -> str:
        lines = [f"nodes {self._n}"]
        lines += [f"edge {i} {j}" for i, j in self._edges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Graph":
        n = None
        edges = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "nodes" and len(parts) == 2:
                n = int(parts[1])
            elif parts[0] == "edge" and len(parts) == 3:
                edges.append((int(parts[1]), int(parts[2])))
            else:
                raise InvalidGraphError(f"line {lineno}: cannot parse {raw!r}")
        if n is None:
            raise InvalidGraphError("missing 'nodes <n>' header")
        return cls(n, edges)

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    # -- cached derived structures -------------------------------------
    def neighborhood(self, u: int, d: int) -> "Neighborhood":
        key = ("nbhd", u, d)
        if key not in self._cache:
            self._cache[key] = neighborhood(self, u, d)
        return self._cache[key]

    def patch_index(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        """Padded member table for all order-``d`` neighborhoods.

        Returns ``(idx, mask)`` of shape ``(n, pmax)``; row ``u`` lists the
        members of N_u^(d) in ascending order, padded with ``u`` itself and
        ``mask`` False on padding.
        """
        key = ("patch", d)
        if key not in self._cache:
            members = [self.neighborhood(u, d).members for u in range(self._n)]
            pmax = max(len(m) for m in members)
            idx = np.empty((self._n, pmax), dtype=np.int64)
            mask = np.zeros((self._n, pmax), dtype=bool)
            for u, m in enumerate(members):
                idx[u, :] = u
                idx[u, :len(m)] = m
                mask[u, :len(m)] = True
            idx.flags.writeable = False
            mask.flags.writeable = False
            self._cache[key] = (idx, mask)
        return self._cache[key]

    def local_laplacian(self, u: int, d: int) -> "LocalLaplacian":
        key = ("lap", u, d)
        if key not in self._cache:
            self._cache[key] = local_dirichlet_laplacian(self, self.neighborhood(u, d))
        return self._cache[key]

    def stacked_laplacians(self, d: int) -> np.ndarray:
        """All order-``d`` local Laplacians zero-padded into ``(n, pmax, pmax)``."""
        key = ("lapstack", d)
        if key not in self._cache:
            idx, mask = self.patch_index(d)
            out = np.zeros((self._n, idx.shape[1], idx.shape[1]))
            for u in range(self._n):
                p = int(mask[u].sum())
                out[u, :p, :p] = self.local_laplacian(u, d).matrix
            out.flags.writeable = False
            self._cache[key] = out
        return self._cache[key]


@dataclass(frozen=True)
class Neighborhood:
    center: int
    order: int
    members: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.members)

    def local_index(self, v: int) -> int:
        return self.members.index(v)


@dataclass(frozen=True)
class NormalizedAdjacency:
    graph: Graph
    mode: str
    matrix: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class LocalLaplacian:
    neighborhood: Neighborhood
    matrix: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def build_ring(n: int) -> Graph:
    if n < 3:
        raise InvalidGraphError(f"ring needs n >= 3, got {n}")
    return Graph(n, [(i, (i + 1) % n) for i in range(n)], kind="ring")


def build_chain(n: int) -> Graph:
    if n < 2:
        raise InvalidGraphError(f"chain needs n >= 2, got {n}")
    return Graph(n, [(i, i + 1) for i in range(n - 1)], kind="chain")


def build_grid(h: int, w: int, connectivity: int = 4) -> Graph:
    """Regular ``h x w`` grid; node ``(i, j)`` has index ``i * w + j``."""
    if h < 1 or w < 1:
        raise InvalidGraphError(f"grid needs h, w >= 1, got {h}x{w}")
    if connectivity != 4:
        raise InvalidGraphError("only 4-connectivity is supported")
    edges = []
    for i in range(h):
        for j in range(w):
            u = i * w + j
            if j + 1 < w:
                edges.append((u, u + 1))
            if i + 1 < h:
                edges.append((u, u + w))
    return Graph(h * w, edges, kind="grid", grid_shape=(h, w))


def build_graph(kind: str, n: int | None = None, h: int | None = None, w: int | None = None) -> Graph:
    need = ("h", "w") if kind == "grid" else ("n",)
    missing = [k for k in need if {"n": n, "h": h, "w": w}[k] is None]
    if missing:
        raise InvalidGraphError(f"a {kind} graph needs {' and '.join(missing)}")
    if kind == "ring":
        return build_ring(n)
    if kind == "chain":
        return build_chain(n)
    if kind == "grid":
        return build_grid(h, w)
    raise InvalidGraphError(f"unknown graph kind {kind!r}")


def neighborhood(g: Graph, u: int, d: int) -> Neighborhood:
    """Breadth-first ball of radius ``d`` around ``u`` (``u`` included)."""
    if not 0 <= u < g.n:
        raise InvalidGraphError(f"node {u} out of range for n={g.n}")
    if d < 0:
        raise InvalidGraphError(f"order must be non-negative, got {d}")
    dist = {u: 0}
    queue = deque([u])
    while queue:
        v = queue.popleft()
        if dist[v] == d:
            continue
        for x in g.neighbors(v):
            if x not in dist:
                dist[x] = dist[v] + 1
                queue.append(x)
    return Neighborhood(center=u, order=d, members=tuple(sorted(dist)))


def normalized_adjacency(g: Graph, mode: str = "sym") -> NormalizedAdjacency:
    if mode not in ADJACENCY_MODES:
        raise ValueError(f"mode must be one of {ADJACENCY_MODES}, got {mode!r}")
    A = g.adjacency_matrix()
    if mode != "raw":
        if np.any(g.degree == 0):
            isolated = np.flatnonzero(g.degree == 0).tolist()
            raise DegreeZeroError(f"isolated nodes {isolated} cannot be normalized")
        if mode == "sym_selfloop":
            A = A + np.eye(g.n)
        dinv = 1.0 / np.sqrt(A.sum(axis=1))
        A = dinv[:, None] * A * dinv[None, :]
    A.flags.writeable = False
    return NormalizedAdjacency(graph=g, mode=mode, matrix=A)


def local_dirichlet_laplacian(g: Graph, nbhd: Neighborhood) -> LocalLaplacian:
    """(D - A) of the full graph restricted to the rows/columns of ``nbhd``."""
    members = nbhd.members
    pos = {v: i for i, v in enumerate(members)}
    p = len(members)
    L = np.zeros((p, p))
    for i, v in enumerate(members):
        L[i, i] = g.degree[v]
        for x in g.neighbors(v):
            j = pos.get(x)
            if j is not None:
                L[i, j] = -1.0
    try:
        evals, evecs = np.linalg.eigh(L)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed on patch u={nbhd.center}, d={nbhd.order}") from exc
    for arr in (L, evals, evecs):
        arr.flags.writeable = False
    return LocalLaplacian(neighborhood=nbhd, matrix=L, eigenvalues=evals, eigenvectors=evecs)


def first_dirichlet_eigvec(ll: LocalLaplacian, gap_tol: float = 1e-10) -> np.ndarray:
    """Unit eigenvector of the smallest eigenvalue, largest-magnitude entry positive."""
    lam = ll.eigenvalues
    if lam.size > 1 and lam[1] - lam[0] <= gap_tol:
        nb = ll.neighborhood
        raise MultiplicityError(
            f"smallest eigenvalue {lam[0]:.3e} is not simple on patch u={nb.center}, d={nb.order}")
    v = ll.eigenvectors[:, 0].copy()
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return v


def is_connected_subgraph(g: Graph, members: Iterable[int]) -> bool:
    members = set(members)
    if not members:
        return False
    start = next(iter(members))
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for x in g.neighbors(v):
            if x in members and x not in seen:
                seen.add(x)
                stack.append(x)
    return seen == members


def has_boundary(g: Graph, members: Iterable[int]) -> bool:
    members = set(members)
    return any(x not in members for v in members for x in g.neighbors(v))


def ring_offsets(g: Graph, d: int) -> np.ndarray:
    """Signed offset ``v - u`` of every padded patch slot on a ring or chain.

    Padding slots hold 0 and must be read together with the patch mask.
    """
    if g.kind not in ("ring", "chain"):
        raise InvalidGraphError(f"signed offsets need a ring or chain, got {g.kind!r}")
    idx, mask = g.patch_index(d)
    off = idx - np.arange(g.n)[:, None]
    if g.kind == "ring":
        half = g.n // 2
        off = (off + half) % g.n - half
    return np.where(mask, off, 0)
