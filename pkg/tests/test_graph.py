import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.sparse.csgraph import shortest_path

from l3net.errors import DegreeZeroError, InvalidGraphError, MultiplicityError
from l3net.graph import (Graph, build_chain, build_grid, build_ring, first_dirichlet_eigvec, has_boundary,
                         is_connected_subgraph, local_dirichlet_laplacian, neighborhood, normalized_adjacency,
                         ring_offsets)


def test_ring_chain_grid_shapes():
    assert len(build_ring(8).edges) == 8
    assert len(build_chain(8).edges) == 7
    g = build_grid(3, 4)
    assert g.n == 12 and len(g.edges) == 3 * 3 + 2 * 4
    assert g.neighbors(5) == (1, 4, 6, 9)


@pytest.mark.parametrize("bad", [lambda: build_ring(2), lambda: build_chain(1), lambda: build_grid(0, 3),
                                 lambda: Graph(3, [(0, 0)]), lambda: Graph(3, [(0, 3)])])
def test_invalid_graphs_raise(bad):
    with pytest.raises(InvalidGraphError):
        bad()


def test_text_roundtrip_and_hash():
    g = build_grid(3, 3)
    h = Graph.from_text(g.to_text())
    assert h == g and h.content_hash() == g.content_hash()
    assert g.to_text().splitlines()[0] == "nodes 9"
    assert build_ring(9).content_hash() != g.content_hash()
    with pytest.raises(InvalidGraphError):
        Graph.from_text("edge 0 1\n")


def test_duplicate_and_reversed_edges_are_canonical():
    assert Graph(3, [(1, 0), (0, 1), (2, 1)]).edges == ((0, 1), (1, 2))


def test_degree_is_read_only(ring8):
    with pytest.raises(ValueError):
        ring8.degree[0] = 5


def test_ring_neighborhoods(ring8):
    assert neighborhood(ring8, 0, 1).members == (0, 1, 7)
    assert ring8.neighborhood(3, 2).members == (1, 2, 3, 4, 5)
    assert ring8.neighborhood(3, 0).members == (3,)
    assert ring8.neighborhood(0, 10).size == 8


def test_patch_index_padding(chain6):
    idx, mask = chain6.patch_index(1)
    assert idx.shape == (6, 3)
    assert mask[0].tolist() == [True, True, False] and idx[0].tolist() == [0, 1, 0]
    assert idx[2].tolist() == [1, 2, 3]


def _brute_force_ball(g, u, d):
    A = sp.csr_matrix(g.adjacency_matrix())
    dist = shortest_path(A, unweighted=True, indices=[u])[0]
    return tuple(np.flatnonzero(dist <= d).tolist())


@settings(max_examples=40, deadline=None)
@given(n=st.integers(3, 12), extra=st.lists(st.tuples(st.integers(0, 11), st.integers(0, 11)), max_size=8),
       d=st.integers(0, 4), data=st.data())
def test_neighborhood_matches_all_pairs_shortest_paths(n, extra, d, data):
    edges = [(i, (i + 1) % n) for i in range(n)] + [(a % n, b % n) for a, b in extra if a % n != b % n]
    g = Graph(n, edges)
    u = data.draw(st.integers(0, n - 1))
    assert g.neighborhood(u, d).members == _brute_force_ball(g, u, d)


def test_normalized_adjacency_modes(ring8):
    A = normalized_adjacency(ring8, "sym").matrix
    assert np.allclose(A, ring8.adjacency_matrix() / 2)
    At = normalized_adjacency(ring8, "sym_selfloop").matrix
    assert np.allclose(At.sum(axis=1), 1.0)
    with pytest.raises(DegreeZeroError):
        normalized_adjacency(Graph(3, [(0, 1)]), "sym")
    assert normalized_adjacency(Graph(3, [(0, 1)]), "raw").matrix.sum() == 2


def test_local_laplacian_uses_full_degrees(ring8):
    ll = ring8.local_laplacian(3, 1)
    assert np.array_equal(ll.matrix, [[2, -1, 0], [-1, 2, -1], [0, -1, 2]])
    assert ll.eigenvalues[0] == pytest.approx(2 - np.sqrt(2), abs=1e-14)


def test_first_dirichlet_eigvec_closed_form(ring8):
    psi = first_dirichlet_eigvec(ring8.local_laplacian(3, 1))
    assert np.allclose(psi, [0.5, 1 / np.sqrt(2), 0.5], atol=1e-12)


def test_multiplicity_error_on_whole_graph_patch():
    g = Graph(4, [(0, 1), (2, 3)])
    ll = local_dirichlet_laplacian(g, g.neighborhood(0, 5).__class__(0, 5, (0, 1, 2, 3)))
    with pytest.raises(MultiplicityError):
        first_dirichlet_eigvec(ll)


def test_connectivity_and_boundary(ring8):
    assert is_connected_subgraph(ring8, (2, 3, 4))
    assert not is_connected_subgraph(ring8, (2, 4))
    assert has_boundary(ring8, (2, 3, 4))
    assert not has_boundary(ring8, range(8))


def test_ring_offsets(ring8):
    off = ring_offsets(ring8, 1)
    idx, _ = ring8.patch_index(1)
    assert off[0].tolist() == [0, 1, -1] and idx[0].tolist() == [0, 1, 7]
    with pytest.raises(InvalidGraphError):
        ring_offsets(build_grid(2, 2), 1)
