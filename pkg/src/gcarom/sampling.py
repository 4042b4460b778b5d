"""Down-sampling by a fixed random node mask, up-sampling by k-NN interpolation."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .errors import ShapeError
from .graph import graph_from_pairs
from .seeding import make_rng

COINCIDENT_TOL = 1e-12


@dataclass
class PoolMask:
    kept: np.ndarray  # sorted node ids
    rate: float
    seed: int
    num_nodes: int

    def __post_init__(self):
        self.kept = np.asarray(self.kept, dtype=np.int64)

    def __eq__(self, other):
        return (isinstance(other, PoolMask) and np.array_equal(self.kept, other.kept)
                and self.rate == other.rate and self.seed == other.seed and self.num_nodes == other.num_nodes)


def pool_size(n, rate):
    # round half up, so 10 nodes at 70% keep 7 and 5 nodes at 50% keep 3
    return max(1, int(math.floor(rate / 100.0 * n + 0.5)))


def make_pool_mask(n, rate, seed):
    """Uniform sample of round(rate% * n) nodes without replacement."""
    if not 0 < rate <= 100:
        raise ValueError(f"pooling rate must lie in (0, 100], got {rate}")
    m = pool_size(n, rate)
    kept = np.arange(n) if m == n else np.sort(make_rng(seed).permutation(n)[:m])
    return PoolMask(kept, float(rate), int(seed), int(n))


def pool(graph, mask):
    """Induced subgraph on the kept nodes, relabelled 0..m-1 in kept order."""
    if mask.num_nodes != graph.num_nodes:
        raise ShapeError(f"mask built for {mask.num_nodes} nodes, graph has {graph.num_nodes}")
    new_id = np.full(graph.num_nodes, -1, dtype=np.int64)
    new_id[mask.kept] = np.arange(mask.kept.size)
    e = new_id[graph.edges]
    e = e[(e >= 0).all(axis=1)]
    feats = None if graph.features is None else graph.features[mask.kept]
    coarse = graph_from_pairs(graph.positions[mask.kept], e, features=feats,
                              pseudo_dim=graph.pseudo_dim, require_connected=False)
    if not coarse.connected:
        warnings.warn("pooled graph is disconnected; message passing continues through self edges",
                      RuntimeWarning, stacklevel=2)
    return coarse


def knn_interpolation_matrix(coarse_positions, fine_positions, k=3):
    """Sparse N_fine x m matrix of inverse-square-distance weights over the k nearest coarse nodes.

    A fine node closer than 1e-12 to a coarse node copies that node's value.
    """
    xc = np.asarray(coarse_positions, dtype=np.float64)
    xf = np.asarray(fine_positions, dtype=np.float64)
    m = xc.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"k = {k} must lie in 1..{m} (number of coarse nodes)")
    d2 = np.sum((xf[:, None, :] - xc[None, :, :]) ** 2, axis=2)
    # stable sort so equidistant ties resolve to the lower coarse id
    nbr = np.argsort(d2, axis=1, kind="stable")[:, :k]
    dist2 = np.take_along_axis(d2, nbr, axis=1)
    w = np.zeros_like(dist2)
    hit = dist2[:, 0] < COINCIDENT_TOL ** 2
    w[hit, 0] = 1.0
    inv = 1.0 / dist2[~hit]
    w[~hit] = inv / inv.sum(axis=1, keepdims=True)
    rows = np.repeat(np.arange(xf.shape[0]), k)
    return sp.csr_matrix((w.ravel(), (rows, nbr.ravel())), shape=(xf.shape[0], m))


def unpool_knn(coarse_positions, coarse_features, fine_positions, k=3, *, matrix=None):
    """Interpolate m x c coarse features onto the fine nodes.

    Differentiable in ``coarse_features``; pass a precomputed ``matrix`` to
    skip the neighbour search.
    """
    if matrix is None:
        matrix = knn_interpolation_matrix(coarse_positions, fine_positions, k)
    return T.sparse_matmul(matrix, coarse_features)
