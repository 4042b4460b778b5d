"""Mesh-to-graph conversion.

Edges are stored as directed (source, target) pairs in both directions plus
one self pair per node, sorted lexicographically so every downstream
reduction runs in a fixed order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import MeshError
from .tensor import mean_matrix


@dataclass
class Mesh:
    positions: np.ndarray  # N_h x 2
    elements: np.ndarray   # T x 3 node ids

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.elements = np.asarray(self.elements, dtype=np.int64).reshape(-1, 3)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise MeshError(f"positions must be N x 2, got {self.positions.shape}")

    @property
    def num_nodes(self):
        return self.positions.shape[0]

    def validate(self):
        n = self.num_nodes
        el = self.elements
        if el.size and (el.min() < 0 or el.max() >= n):
            raise MeshError(f"element references a node outside 0..{n - 1}")
        bad = (el[:, 0] == el[:, 1]) | (el[:, 1] == el[:, 2]) | (el[:, 0] == el[:, 2])
        if bad.any():
            raise MeshError(f"degenerate triangle at element {int(np.flatnonzero(bad)[0])}")
        used = np.zeros(n, dtype=bool)
        used[el.ravel()] = True
        if not used.all():
            raise MeshError(f"dangling nodes not referenced by any element: {np.flatnonzero(~used)[:10].tolist()}")


@dataclass
class Graph:
    num_nodes: int
    edges: np.ndarray       # E x 2 (source, target), symmetric, with self pairs
    positions: np.ndarray   # N x 2
    pseudo: np.ndarray = None  # E x D
    features: np.ndarray = None  # N x d, optional
    pseudo_dim: int = 1
    connected: bool = True
    degrees: np.ndarray = field(init=False)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.degrees = np.bincount(self.edges[:, 1], minlength=self.num_nodes)
        if self.pseudo is None:
            self.pseudo = edge_pseudo_coordinates(self, self.pseudo_dim)

    @property
    def source(self):
        return self.edges[:, 0]

    @property
    def target(self):
        return self.edges[:, 1]

    @property
    def num_edges(self):
        return self.edges.shape[0]

    @cached_property
    def mean_op(self):
        """Sparse N x E averaging operator and its transpose."""
        m = mean_matrix(self.target, self.num_nodes)
        return m, m.T.tocsr()

    def adjacency(self):
        """Dense (A + I) as used by the matrix form of message passing."""
        a = np.zeros((self.num_nodes, self.num_nodes))
        a[self.target, self.source] = 1.0
        return a


def _canonical_pairs(pairs, n):
    pairs = np.concatenate([pairs, pairs[:, ::-1], np.repeat(np.arange(n), 2).reshape(n, 2)])
    pairs = np.unique(pairs, axis=0)  # sorted lexicographically
    return pairs


def component_sizes(num_nodes, edges):
    adj = sp.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(num_nodes, num_nodes))
    _, labels = connected_components(adj, directed=False)
    return np.sort(np.bincount(labels))[::-1]


def graph_from_pairs(positions, pairs, *, features=None, pseudo_dim=1, require_connected=True):
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    edges = _canonical_pairs(pairs, n)
    sizes = component_sizes(n, edges)
    if require_connected and len(sizes) > 1:
        raise MeshError(f"graph is disconnected; component sizes {sizes.tolist()}")
    return Graph(n, edges, positions, features=features, pseudo_dim=pseudo_dim,
                 connected=len(sizes) == 1)


def build_graph(mesh, *, features=None, pseudo_dim=1):
    """Undirected graph of triangle sides plus self pairs, checked for connectivity."""
    mesh.validate()
    el = mesh.elements
    sides = np.concatenate([el[:, [0, 1]], el[:, [1, 2]], el[:, [2, 0]]])
    return graph_from_pairs(mesh.positions, sides, features=features, pseudo_dim=pseudo_dim)


def edge_pseudo_coordinates(graph, dim=1):
    """Per-edge distance (dim 1) or relative offset target - source (dim 2)."""
    x = graph.positions
    offset = x[graph.target] - x[graph.source]
    if dim == 1:
        return np.sqrt(np.sum(offset * offset, axis=1))[:, None]
    if dim == 2:
        return offset
    raise ValueError(f"pseudo-coordinate dimension must be 1 or 2, got {dim}")


def check_permutation(perm, n):
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError(f"not a permutation of {n} nodes")
    return perm


def permute_rows(x, perm):
    """Move row i of ``x`` to row perm[i]."""
    out = np.empty_like(x)
    out[perm] = x
    return out


def permute_nodes(graph, perm):
    """Relabel node i as perm[i]; positions, features and edges follow."""
    perm = check_permutation(perm, graph.num_nodes)
    edges = np.unique(perm[graph.edges], axis=0)
    feats = None if graph.features is None else permute_rows(graph.features, perm)
    return Graph(graph.num_nodes, edges, permute_rows(graph.positions, perm), features=feats,
                 pseudo_dim=graph.pseudo_dim, connected=graph.connected)
