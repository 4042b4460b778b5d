"""Small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the graph autoencoder needs are provided. There is no
implicit broadcasting: row-wise bias addition, per-edge mixture weighting and
sparse products are separate, explicit operations.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ShapeError


class Tensor:
    """Dense float64 array with an optional gradient and producing operation."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, *, _parents=(), _backward=None, op="leaf"):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)
    __sub__ = lambda self, other: sub(self, other)
    __mul__ = lambda self, other: mul(self, other) if isinstance(other, Tensor) else scale(self, other)
    __rmul__ = lambda self, other: scale(self, other)
    __neg__ = lambda self: scale(self, -1.0)
    __matmul__ = lambda self, other: matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def custom_op(value, parents, backward_fn, name):
    """Wrap ``value`` as the result of an operation on ``parents``.

    ``backward_fn(grad_out)`` must return one gradient (or None) per parent.
    The graph is only recorded when some parent requires a gradient.
    """
    if any(p.requires_grad for p in parents):
        return Tensor(value, True, _parents=tuple(parents), _backward=backward_fn, op=name)
    return Tensor(value, op=name)


def _check_same(a, b, name):
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


# -- linear algebra ---------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.data, b.data

    def bw(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)

    return custom_op(av @ bv, (a, b), bw, "matmul")


def sparse_matmul(mat, x, mat_t=None):
    """Product of a constant scipy sparse matrix with a 2-D tensor.

    ``mat_t`` may carry a precomputed CSR transpose for repeated use.
    """
    x = as_tensor(x)
    if x.ndim != 2 or mat.shape[1] != x.shape[0]:
        raise ShapeError(f"sparse_matmul: cannot multiply {mat.shape} by {x.shape}")
    mat = sp.csr_matrix(mat)
    if mat_t is None:
        mat_t = mat.T.tocsr()
    return custom_op(np.asarray(mat @ x.data), (x,), lambda g: (np.asarray(mat_t @ g),), "sparse_matmul")


# -- elementwise ------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "add")
    return custom_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "sub")
    return custom_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "mul")
    av, bv = a.data, b.data
    return custom_op(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return custom_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return custom_op(out, (a,), lambda g: (g * out,), "exp")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return custom_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def elu(a, alpha=1.0):
    a = as_tensor(a)
    x = a.data
    neg = x < 0
    em1 = np.expm1(np.where(neg, x, 0.0))
    out = np.where(neg, alpha * em1, x)
    slope = np.where(neg, alpha * (em1 + 1.0), 1.0)
    return custom_op(out, (a,), lambda g: (g * slope,), "elu")


def square(a):
    a = as_tensor(a)
    x = a.data
    return custom_op(x * x, (a,), lambda g: (2.0 * g * x,), "square")


_UNARY = {"exp": exp, "tanh": tanh, "elu": elu, "square": square}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op, a, b=None):
    """Dispatch by name: add, sub, mul, scale (b is a float), exp, tanh, elu, square."""
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} needs a second operand")
        return _BINARY[op](a, b)
    if op == "scale":
        return scale(a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


def identity(a):
    return a


ACTIVATIONS = {"elu": elu, "tanh": tanh, "identity": identity}


# -- shape and reductions ---------------------------------------------------

def add_rowvec(x, b):
    """Add a length-c vector ``b`` to every row of ``x`` (B x c)."""
    x, b = as_tensor(x), as_tensor(b)
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_rowvec: rows of {x.shape} do not match vector {b.shape}")
    return custom_op(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)), "add_rowvec")


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    out = a.data.reshape(shape)
    return custom_op(out, (a,), lambda g: (g.reshape(old),), "reshape")


def permute(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    out = np.ascontiguousarray(a.data.transpose(axes))
    return custom_op(out, (a,), lambda g: (g.transpose(inv),), "permute")


def total(a):
    """Sum of all entries, as a 1-element tensor."""
    a = as_tensor(a)
    shape = a.shape
    return custom_op(np.array([a.data.sum()]), (a,), lambda g: (np.full(shape, g[0]),), "sum")


def sum_squares(a):
    a = as_tensor(a)
    x = a.data
    return custom_op(np.array([np.dot(x.ravel(), x.ravel())]), (a,), lambda g: (2.0 * g[0] * x,), "sum_squares")


# -- graph primitives -------------------------------------------------------

def _check_index(index, n, name):
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise ShapeError(f"{name}: index must be one-dimensional")
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"{name}: index out of range for {n} rows")
    return index


def gather(h, index):
    """Rows ``index`` of ``h``; the backward pass scatter-adds."""
    h = as_tensor(h)
    n = h.shape[0]
    index = _check_index(index, n, "gather")
    out = h.data[index]
    # scatter-add through a sparse E->N operator; np.add.at is slow for wide rows
    scat = sp.csr_matrix((np.ones(index.size), (index, np.arange(index.size))), shape=(n, index.size))

    def bw(g):
        flat = g.reshape(index.size, -1)
        return (np.asarray(scat @ flat).reshape((n,) + g.shape[1:]),)

    return custom_op(out, (h,), bw, "gather")


def mean_matrix(targets, n):
    """Sparse n x E operator averaging the rows that share a target."""
    targets = np.asarray(targets, dtype=np.int64)
    counts = np.bincount(targets, minlength=n).astype(np.float64)
    weights = 1.0 / counts[targets] if targets.size else np.zeros(0)
    return sp.csr_matrix((weights, (targets, np.arange(targets.size))), shape=(n, targets.size))


def scatter_mean(msgs, targets, n):
    """Row u of the result is the mean of the message rows sent to u (zero if none)."""
    msgs = as_tensor(msgs)
    targets = _check_index(targets, n, "scatter_mean")
    if msgs.ndim != 2 or msgs.shape[0] != targets.size:
        raise ShapeError(f"scatter_mean: {msgs.shape[0]} messages but {targets.size} targets")
    return sparse_matmul(mean_matrix(targets, n), msgs)


def mixture(msgs, weights, batch):
    """Average over filter blocks, each scaled by a per-row weight.

    ``msgs`` is E x (batch*q*c), each row laid out as (batch, q, c);
    ``weights`` is E x q. Returns E x (batch*c) with
    out[e, b, c] = (1/q) sum_k weights[e, k] * msgs[e, b, k, c].
    """
    msgs, weights = as_tensor(msgs), as_tensor(weights)
    e, q = weights.shape
    if msgs.shape[0] != e or msgs.shape[1] % (batch * q):
        raise ShapeError(f"mixture: messages {msgs.shape} incompatible with weights {weights.shape}")
    c = msgs.shape[1] // (batch * q)
    m = msgs.data.reshape(e, batch, q, c)
    w = weights.data / q
    # q is small, a loop over filters beats einsum here
    out = w[:, 0, None, None] * m[:, :, 0, :]
    for k in range(1, q):
        out += w[:, k, None, None] * m[:, :, k, :]
    out = out.reshape(e, batch * c)

    def bw(g):
        g3 = g.reshape(e, batch, c)
        gm = gw = None
        if msgs.requires_grad:
            gm = np.empty((e, batch, q, c))
            for k in range(q):
                np.multiply(g3, w[:, k, None, None], out=gm[:, :, k, :])
            gm = gm.reshape(e, -1)
        if weights.requires_grad:
            gw = np.empty((e, q))
            for k in range(q):
                gw[:, k] = (m[:, :, k, :] * g3).reshape(e, -1).sum(axis=1) / q
        return gm, gw

    return custom_op(out, (msgs, weights), bw, "mixture")


def mixture_aggregate(x, weights, source, target, n, batch):
    """Fused gather -> mixture -> scatter_mean.

    out[u] = mean over edges e with target u of (1/q) sum_k weights[e, k] * x_k[source[e]]
    where ``x`` is N_src x (batch*q*c) with rows laid out as (batch, q, c) and
    ``weights`` is E x q. Equal to
    ``scatter_mean(mixture(gather(x, source), weights, batch), target, n)``
    but without materialising per-edge messages.
    """
    x, weights = as_tensor(x), as_tensor(weights)
    source = _check_index(source, x.shape[0], "mixture_aggregate")
    target = _check_index(target, n, "mixture_aggregate")
    e, q = weights.shape
    if source.size != e or target.size != e or x.shape[1] % (batch * q):
        raise ShapeError(f"mixture_aggregate: {x.shape} features, {weights.shape} weights, {e} edges")
    n_src = x.shape[0]
    c = x.shape[1] // (batch * q)
    order = np.lexsort((source, target))
    indptr = np.concatenate([[0], np.cumsum(np.bincount(target, minlength=n))])
    coef = 1.0 / (np.bincount(target, minlength=n)[target] * q)
    xs = x.data.reshape(n_src, batch, q, c)
    w = weights.data
    blocks = [np.ascontiguousarray(xs[:, :, k, :]).reshape(n_src, batch * c) for k in range(q)]
    mats = [sp.csr_matrix(((w[:, k] * coef)[order], source[order], indptr), shape=(n, n_src)) for k in range(q)]
    out = mats[0] @ blocks[0]
    for k in range(1, q):
        out += mats[k] @ blocks[k]

    def bw(g):
        gx = gw = None
        if x.requires_grad:
            gx = np.empty((n_src, batch, q, c))
            for k in range(q):
                gx[:, :, k, :] = (mats[k].T @ g).reshape(n_src, batch, c)
            gx = gx.reshape(n_src, -1)
        if weights.requires_grad:
            gt = g[target]
            gw = np.empty((e, q))
            for k in range(q):
                gw[:, k] = np.einsum("ij,ij->i", gt, blocks[k][source]) * coef
        return gx, gw

    return custom_op(np.asarray(out), (x, weights), bw, "mixture_aggregate")


# -- backward ---------------------------------------------------------------

def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    Leaf gradients accumulate across calls; intermediate gradients are
    discarded after use.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    grads = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = gp if key not in grads else grads[key] + gp


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw):
        return cls(first_moment=[np.zeros(p.shape) for p in params],
                   second_moment=[np.zeros(p.shape) for p in params], **kw)


def adam_step(params, state, lr=1e-3, weight_decay=0.0):
    """One Adam update with bias correction; weight decay enters as an L2 gradient term."""
    if len(state.first_moment) != len(params):
        raise ValueError("Adam state does not match the parameter list")
    for p in params:
        if p.grad is None:
            raise RuntimeError(f"parameter of shape {p.shape} has no gradient")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        if m.shape != p.shape:
            raise ShapeError(f"Adam moment shape {m.shape} does not match parameter {p.shape}")
        g = p.grad + weight_decay * p.data if weight_decay else p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
