"""Graph convolutions with learnable low-rank local filters."""
from .graph import Graph, build_chain, build_graph, build_grid, build_ring, normalized_adjacency
from .layers import FilterBank, ChebParams, GATParams, EdgeNetParams, l3net_forward
from .estimator import GraphConvClassifier

__version__ = "0.1.0"

__all__ = ["ChebParams", "EdgeNetParams", "FilterBank", "GATParams", "Graph", "GraphConvClassifier",
           "build_chain", "build_graph", "build_grid", "build_ring", "l3net_forward", "normalized_adjacency"]
