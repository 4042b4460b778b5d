"""Trainable layers: MoNet Gaussian-mixture convolution, GCN step, dense layers.

Node features for a batch of B samples on one graph are held as an
N x (B*c) tensor (row = node, columns = sample-major channel blocks). With
B = 1 this is the usual N x c feature matrix.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .seeding import make_rng
from .tensor import Tensor


def gaussian_weight(e, mean, inv_var):
    """exp(-1/2 sum_k inv_var_k (e_k - mean_k)^2) for one pseudo-coordinate."""
    e, mean, inv_var = (np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in (e, mean, inv_var))
    return float(np.exp(-0.5 * np.sum(inv_var * (e - mean) ** 2)))


def gaussian_weights(pseudo, means, sqrt_inv_var):
    """Kernel values for every edge and filter, E x Q.

    ``pseudo`` is a constant E x D array; ``means`` and ``sqrt_inv_var`` are
    Q x D tensors. The inverse variances are the squares of ``sqrt_inv_var``.
    """
    pseudo = np.asarray(pseudo, dtype=np.float64)
    mu, s = means.data, sqrt_inv_var.data
    if pseudo.ndim != 2 or mu.shape != s.shape or pseudo.shape[1] != mu.shape[1]:
        raise ShapeError(f"gaussian_weights: pseudo {pseudo.shape}, means {mu.shape}, scales {s.shape}")
    diff = pseudo[:, None, :] - mu[None, :, :]  # E x Q x D
    s2 = s * s
    out = np.exp(-0.5 * np.einsum("eqd,qd->eq", diff * diff, s2))

    def bw(g):
        go = g * out
        g_mu = np.einsum("eq,eqd->qd", go, diff) * s2 if means.requires_grad else None
        g_s = -np.einsum("eq,eqd->qd", go, diff * diff) * s if sqrt_inv_var.requires_grad else None
        return g_mu, g_s

    return T.custom_op(out, (means, sqrt_inv_var), bw, "gaussian")


def _fan_in_uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class MoNetKernel:
    """Gaussian-mixture graph convolution with Q filters.

    h_u = 1/|N(u)| sum_{v in N(u)} 1/Q sum_q w_q(e_uv) W_q h_v  (+ bias)
    """

    def __init__(self, c_in, c_out, q=3, *, pseudo_dim=1, bias=False, pseudo_range=(0.0, 1.0), rng=None):
        if q < 1:
            raise ValueError("MoNet needs at least one filter")
        rng = make_rng(0) if rng is None else rng
        self.c_in, self.c_out, self.q, self.pseudo_dim = c_in, c_out, q, pseudo_dim
        lo, hi = pseudo_range
        self.means = Tensor(rng.uniform(lo, hi, size=(q, pseudo_dim)), True)
        self.sqrt_inv_var = Tensor(np.ones((q, pseudo_dim)), True)
        # column block k holds W_k (c_in x c_out)
        self.weight = Tensor(_fan_in_uniform(rng, c_in, (c_in, q * c_out)), True)
        self.bias = Tensor(np.zeros(c_out), True) if bias else None

    @property
    def inv_var(self):
        return self.sqrt_inv_var.data ** 2

    def filter(self, k):
        return self.weight.data[:, k * self.c_out:(k + 1) * self.c_out]

    def set_filters(self, mats):
        self.weight.data[...] = np.concatenate([np.asarray(m, dtype=np.float64) for m in mats], axis=1)

    def named_params(self):
        out = {"means": self.means, "sqrt_inv_var": self.sqrt_inv_var, "weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def params(self):
        return list(self.named_params().values())

    def num_params(self):
        return sum(p.size for p in self.params())

    def __call__(self, h, graph, batch=1):
        return monet_forward(h, graph, self, batch)


def monet_forward(h, graph, kernel, batch=1):
    h = T.as_tensor(h)
    n = graph.num_nodes
    if h.shape != (n, batch * kernel.c_in):
        raise ShapeError(f"MoNet expects {(n, batch * kernel.c_in)} features, got {h.shape}")
    hw = T.matmul(T.reshape(h, (n * batch, kernel.c_in)), kernel.weight)
    hw = T.reshape(hw, (n, batch * kernel.q * kernel.c_out))
    w = gaussian_weights(graph.pseudo, kernel.means, kernel.sqrt_inv_var)
    out = T.mixture_aggregate(hw, w, graph.source, graph.target, n, batch)
    if kernel.bias is not None:
        out = T.reshape(T.add_rowvec(T.reshape(out, (n * batch, kernel.c_out)), kernel.bias),
                        (n, batch * kernel.c_out))
    return out


def gcn_forward(h, graph, weight, bias=None, activation="identity", batch=1):
    """sigma(1/|N(u)| sum_{v in N(u)} W h_v + b) over the self-looped graph.

    ``weight`` is c_in x c_out (the transpose of the per-node W acting on
    column vectors); for a single graph this is sigma(D^-1 (A+I) H W + b).
    """
    h, weight = T.as_tensor(h), T.as_tensor(weight)
    n = graph.num_nodes
    c_in, c_out = weight.shape
    if h.shape != (n, batch * c_in):
        raise ShapeError(f"GCN expects {(n, batch * c_in)} features, got {h.shape}")
    hw = T.reshape(T.matmul(T.reshape(h, (n * batch, c_in)), weight), (n, batch * c_out))
    out = T.scatter_mean(T.gather(hw, graph.source), graph.target, n)
    if bias is not None:
        out = T.reshape(T.add_rowvec(T.reshape(out, (n * batch, c_out)), bias), (n, batch * c_out))
    return T.ACTIVATIONS[activation](out)


class DenseLayer:
    def __init__(self, c_in, c_out, activation="identity", *, rng=None):
        if activation not in T.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = make_rng(0) if rng is None else rng
        self.activation = activation
        self.weight = Tensor(_fan_in_uniform(rng, c_in, (c_in, c_out)), True)
        self.bias = Tensor(np.zeros(c_out), True)

    @property
    def shape(self):
        return self.weight.shape

    def named_params(self):
        return {"weight": self.weight, "bias": self.bias}

    def params(self):
        return [self.weight, self.bias]

    def num_params(self):
        return self.weight.size + self.bias.size

    def __call__(self, x):
        return dense_forward(x, self)


def dense_forward(x, layer):
    x = T.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != layer.weight.shape[0]:
        raise ShapeError(f"dense layer {layer.weight.shape} cannot take input {x.shape}")
    return T.ACTIVATIONS[layer.activation](T.add_rowvec(T.matmul(x, layer.weight), layer.bias))


def skip_connect(block_input, block_output):
    return T.add(block_output, block_input)
