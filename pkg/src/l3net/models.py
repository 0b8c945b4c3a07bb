"""Trainable modules and the ring/chain and grid classification architectures."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import InvalidGraphError, StructuralError
from .graph import Graph, build_chain, build_ring
from .layers import (ChebParams, EdgeNetParams, FilterBank, GATParams, cheb_adjacency, chebnet_forward,
                     edgenet_forward, gat_forward, l3net_forward)
from .regularization import RegContext, reg_penalty

LAYER_KINDS = ("l3net", "cheb", "gcn", "gat", "edgenet")
ARCHITECTURES = ("updown2", "updown1", "mnist2")


def _as_params(values):
    return [v if v is None or isinstance(v, ad.Tensor) else ad.parameter(v) for v in values]


class GraphConv:
    """One graph-convolution slot filled by any layer kind."""

    def __init__(self, kind: str, graph: Graph, in_channels: int, out_channels: int, rng: np.random.Generator,
                 orders=(1,), cheb_L: int = 5, heads: int = 1, edgenet_L: int = 2, shared_basis: bool = False):
        if kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {kind!r}; expected one of {LAYER_KINDS}")
        self.kind, self.graph = kind, graph
        self.in_channels, self.out_channels = in_channels, out_channels
        self.bank = self.cheb = self.gat = self.edge = None
        if kind == "l3net":
            if shared_basis and graph.kind not in ("ring", "chain"):
                raise InvalidGraphError(f"shared basis needs a ring or chain, got {graph.kind!r}")
            self.bank = FilterBank.random(graph, orders, in_channels, out_channels, rng,
                                          shared_basis=shared_basis).as_parameters()
        elif kind in ("cheb", "gcn"):
            cp = ChebParams.random(cheb_L, in_channels, out_channels, rng, tied_gcn=kind == "gcn")
            theta, bias = _as_params([cp.theta, cp.bias])
            self.cheb = ChebParams(theta, cp.alpha, cp.tied_gcn, bias)
            self.adjacency = cheb_adjacency(graph, kind == "gcn")
        elif kind == "gat":
            gp = GATParams.random(graph, heads, in_channels, out_channels, rng)
            W, att, theta, bias = _as_params([gp.W, gp.att, gp.theta, gp.bias])
            self.gat = GATParams(graph, W, att, theta, bias, gp.leaky_slope)
        else:
            ep = EdgeNetParams.random(graph, edgenet_L, in_channels, out_channels, rng)
            phi0, thetas, bias = _as_params([ep.phi0, ep.thetas, ep.bias])
            self.edge = EdgeNetParams(graph, phi0, _as_params(ep.phis), thetas, bias)

    @property
    def _params_obj(self):
        return self.bank or self.cheb or self.gat or self.edge

    def parameters(self) -> list:
        return self._params_obj.parameters()

    def num_parameters(self) -> int:
        return self._params_obj.num_parameters()

    def __call__(self, X, training: bool = False) -> ad.Tensor:
        if self.kind == "l3net":
            return l3net_forward(X, self.bank)
        if self.cheb is not None:
            return chebnet_forward(X, self.cheb, self.adjacency)
        if self.gat is not None:
            return gat_forward(X, self.gat)
        return edgenet_forward(X, self.edge)


class BatchNorm:
    def __init__(self, channels: int):
        self.gamma = ad.parameter(np.ones(channels))
        self.beta = ad.parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def parameters(self) -> list:
        return [self.gamma, self.beta]

    def buffers(self) -> list:
        return [self.running_mean, self.running_var]

    def num_parameters(self) -> int:
        return 2 * self.gamma.value.size

    def __call__(self, x, training: bool = False) -> ad.Tensor:
        return ad.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var, training)


class Linear:
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        s = in_features ** -0.5
        self.W = ad.parameter(rng.uniform(-s, s, (in_features, out_features)))
        self.b = ad.parameter(np.zeros(out_features))

    def parameters(self) -> list:
        return [self.W, self.b]

    def num_parameters(self) -> int:
        return self.W.value.size + self.b.value.size

    def __call__(self, x, training: bool = False) -> ad.Tensor:
        return ad.add(ad.matmul(x, self.W), self.b)


def pooled_graph(g: Graph) -> Graph:
    """Ring or chain on ``n / 2`` nodes following a stride-2 node pooling."""
    if g.n % 2:
        raise StructuralError(f"stride-2 pooling needs an even node count, got {g.n}")
    if g.kind == "ring":
        return build_ring(g.n // 2)
    if g.kind == "chain":
        return build_chain(g.n // 2)
    raise InvalidGraphError(f"node pooling is defined on a ring or chain, got {g.kind!r}")


class GraphNet:
    """``updown2``, ``updown1`` or ``mnist2`` with GraphConv slots of one layer kind.

    updown2: GraphConv(C,32)-ReLU-MaxPool(2)-GraphConv(32,64)-ReLU-MeanPool-FC
    updown1: GraphConv(C,32)-ReLU-MeanPool-FC
    mnist2:  GraphConv(C,32)-BN-ReLU-GraphConv(32,64)-BN-ReLU-Flatten-FC
    """

    def __init__(self, arch: str, graph: Graph, layer: str = "l3net", in_channels: int = 1,
                 num_classes: int = 2, rng: np.random.Generator | None = None, **layer_kw):
        if arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
        rng = rng or np.random.default_rng(0)
        self.arch, self.graph, self.layer = arch, graph, layer
        self.in_channels, self.num_classes = in_channels, num_classes
        self.convs, self.norms = [], []
        if arch == "updown2":
            self.convs.append(GraphConv(layer, graph, in_channels, 32, rng, **layer_kw))
            self.convs.append(GraphConv(layer, pooled_graph(graph), 32, 64, rng, **layer_kw))
            self.fc = Linear(64, num_classes, rng)
        elif arch == "updown1":
            self.convs.append(GraphConv(layer, graph, in_channels, 32, rng, **layer_kw))
            self.fc = Linear(32, num_classes, rng)
        else:
            self.convs.append(GraphConv(layer, graph, in_channels, 32, rng, **layer_kw))
            self.convs.append(GraphConv(layer, graph, 32, 64, rng, **layer_kw))
            self.norms = [BatchNorm(32), BatchNorm(64)]
            self.fc = Linear(graph.n * 64, num_classes, rng)

    def parameters(self) -> list:
        out = []
        for c in self.convs:
            out += c.parameters()
        for bn in self.norms:
            out += bn.parameters()
        return out + self.fc.parameters()

    def buffers(self) -> list:
        return [b for bn in self.norms for b in bn.buffers()]

    def num_parameters(self, include_fc: bool = False) -> int:
        n = sum(c.num_parameters() for c in self.convs) + sum(bn.num_parameters() for bn in self.norms)
        return n + (self.fc.num_parameters() if include_fc else 0)

    def banks(self) -> list:
        return [c.bank for c in self.convs if c.bank is not None]

    def reg_contexts(self, lam: float) -> list:
        return [RegContext.for_bank(b, lam) for b in self.banks()]

    def reg_value(self) -> float:
        """Unweighted penalty summed over every L3Net layer (0 without one)."""
        return float(sum(reg_penalty(b.detached(), RegContext.for_bank(b)).value for b in self.banks()))

    def forward(self, X, training: bool = False) -> ad.Tensor:
        h = ad.as_tensor(X)
        if self.arch == "mnist2":
            for conv, bn in zip(self.convs, self.norms):
                h = ad.relu(bn(conv(h), training))
            return self.fc(ad.flatten(h))
        h = ad.relu(self.convs[0](h))
        if self.arch == "updown2":
            h = ad.relu(self.convs[1](ad.stride2_max_pool_nodes(h)))
        return self.fc(ad.global_mean_pool_nodes(h))

    __call__ = forward
