import math

import numpy as np
import pytest
from conftest import random_graph

from gcarom.errors import MeshError
from gcarom.graph import Mesh, build_graph, check_permutation, edge_pseudo_coordinates, graph_from_pairs, permute_nodes
from gcarom.synthetic import generate_mesh


def side_pairs(g):
    return int(np.sum(g.source != g.target)), int(np.sum(g.source == g.target))


def test_single_triangle():
    g = build_graph(Mesh(np.array([[0, 0], [1, 0], [0, 1.0]]), [[0, 1, 2]]))
    assert side_pairs(g) == (6, 3)
    np.testing.assert_array_equal(g.degrees, [3, 3, 3])


def test_two_triangles_sharing_an_edge(two_triangles):
    g = build_graph(two_triangles)
    assert side_pairs(g) == (10, 4)
    assert g.degrees[1] == 4
    # hand enumeration: nodes 1 and 2 touch everything, 0 and 3 miss each other
    np.testing.assert_array_equal(g.degrees, [3, 4, 4, 3])


def test_isolated_node_rejected():
    pos = np.array([[0, 0], [1, 0], [0, 1.0], [5, 5]])
    with pytest.raises(MeshError, match="dangling"):
        build_graph(Mesh(pos, [[0, 1, 2]]))


def test_disconnected_mesh_lists_component_sizes():
    pos = np.array([[0, 0], [1, 0], [0, 1], [5, 5], [6, 5], [5, 6], [6, 6.0]])
    mesh = Mesh(pos, [[0, 1, 2], [3, 4, 5], [4, 5, 6]])
    with pytest.raises(MeshError, match=r"\[4, 3\]"):
        build_graph(mesh)


def test_degenerate_and_out_of_range_elements():
    pos = np.zeros((3, 2))
    with pytest.raises(MeshError):
        build_graph(Mesh(pos, [[0, 0, 1]]))
    with pytest.raises(MeshError):
        build_graph(Mesh(pos, [[0, 1, 3]]))


def test_graph_invariants_on_jittered_mesh():
    g = build_graph(generate_mesh(6, 0.3, seed=1))
    pairs = set(map(tuple, g.edges.tolist()))
    assert all((j, i) in pairs for i, j in pairs)
    assert len(pairs) == g.num_edges
    assert np.sum(g.source == g.target) == g.num_nodes
    np.testing.assert_array_equal(g.degrees, np.bincount(g.target, minlength=g.num_nodes))
    # sorted lexicographically
    assert np.all(np.diff(g.edges[:, 0] * g.num_nodes + g.edges[:, 1]) > 0)


def test_independent_of_element_order():
    mesh = generate_mesh(5, 0.2, seed=2)
    rng = np.random.default_rng(0)
    shuffled = Mesh(mesh.positions, rng.permuted(mesh.elements[rng.permutation(len(mesh.elements))], axis=1))
    a, b = build_graph(mesh), build_graph(shuffled)
    np.testing.assert_array_equal(a.edges, b.edges)
    np.testing.assert_array_equal(a.pseudo, b.pseudo)


def test_pseudo_coordinate_345():
    g = graph_from_pairs(np.array([[0.0, 0.0], [3.0, 4.0]]), np.array([[0, 1]]))
    e = {tuple(p): v for p, v in zip(g.edges.tolist(), g.pseudo[:, 0])}
    assert e[(0, 1)] == 5.0 and e[(1, 0)] == 5.0
    assert e[(0, 0)] == 0.0 and e[(1, 1)] == 0.0


def test_unit_square_diagonal():
    g = build_graph(generate_mesh(1))
    diag = g.pseudo[(g.source == 0) & (g.target == 3), 0]
    assert abs(diag[0] - math.sqrt(2)) < 1e-15


def test_regular_mesh_edge_lengths():
    h = 1 / 5
    g = build_graph(generate_mesh(5))
    lengths = g.pseudo[g.source != g.target, 0]
    assert np.all(np.isclose(lengths, h, atol=1e-14) | np.isclose(lengths, math.sqrt(2) * h, atol=1e-14))


def test_pseudo_dim_two_offsets():
    g = graph_from_pairs(np.array([[0.0, 0.0], [3.0, 4.0]]), np.array([[0, 1]]), pseudo_dim=2)
    row = np.flatnonzero((g.source == 0) & (g.target == 1))[0]
    np.testing.assert_array_equal(g.pseudo[row], [3.0, 4.0])
    with pytest.raises(ValueError):
        edge_pseudo_coordinates(g, 3)


def test_identity_permutation():
    g = random_graph(12, 0)
    p = permute_nodes(g, np.arange(12))
    np.testing.assert_array_equal(p.edges, g.edges)
    np.testing.assert_array_equal(p.positions, g.positions)


def test_swap_twice_is_original():
    g = random_graph(8, 1)
    swap = np.array([1, 0] + list(range(2, 8)))
    back = permute_nodes(permute_nodes(g, swap), swap)
    np.testing.assert_array_equal(back.edges, g.edges)
    np.testing.assert_array_equal(back.positions, g.positions)


def test_permutation_then_inverse():
    g = random_graph(15, 2)
    perm = np.random.default_rng(3).permutation(15)
    back = permute_nodes(permute_nodes(g, perm), np.argsort(perm))
    np.testing.assert_array_equal(back.edges, g.edges)
    np.testing.assert_array_equal(back.pseudo, g.pseudo)


def test_permutation_moves_degrees_and_keeps_pseudo_multiset():
    g = random_graph(20, 4)
    perm = np.random.default_rng(5).permutation(20)
    p = permute_nodes(g, perm)
    np.testing.assert_array_equal(p.degrees[perm], g.degrees)
    assert sorted(p.degrees) == sorted(g.degrees)
    np.testing.assert_allclose(np.sort(p.pseudo[:, 0]), np.sort(g.pseudo[:, 0]), rtol=0, atol=0)


def test_non_bijective_permutation_rejected():
    g = random_graph(4, 6)
    with pytest.raises(ValueError):
        permute_nodes(g, [0, 0, 1, 2])
    with pytest.raises(ValueError):
        check_permutation([0, 1, 2], 4)


def test_adjacency_matches_edges(two_triangles):
    g = build_graph(two_triangles)
    a = g.adjacency()
    assert np.array_equal(a, a.T)
    np.testing.assert_array_equal(a.sum(axis=1), g.degrees)
