"""Analytic snapshot families on jittered unit-square triangulations.

These stand in for finite-element benchmarks and cover three regimes:

* ``smooth``: finite-element solutions of a nonlinear Poisson problem with an
  exponential sink (fast POD decay),
* ``front``: a travelling tanh front whose steepness grows with mu_1
  (slow POD decay),
* ``bifurcating``: a two-component field that switches branch at mu_1 = mu_c.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import MeshError, NumericalError
from .graph import Mesh
from .pipeline import SnapshotDataset
from .seeding import make_rng

FAMILIES = ("smooth", "front", "bifurcating")


def generate_mesh(resolution, jitter=0.0, seed=0):
    """(resolution+1)^2 nodes on the unit square, two triangles per cell.

    Interior nodes move by uniform noise of amplitude ``jitter`` cell widths;
    ``jitter`` must stay below 0.5 and no triangle may flip orientation.
    """
    if resolution < 1:
        raise MeshError(f"resolution must be at least 1, got {resolution}")
    if not 0 <= jitter < 0.5:
        raise MeshError(f"jitter must lie in [0, 0.5) cell widths, got {jitter}")
    r = resolution
    h = 1.0 / r
    xs = np.linspace(0.0, 1.0, r + 1)
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    pos = np.column_stack([gx.ravel(), gy.ravel()])
    if jitter > 0:
        ij = np.indices((r + 1, r + 1)).reshape(2, -1)
        interior = (ij.min(axis=0) > 0) & (ij.max(axis=0) < r)
        noise = make_rng(seed).uniform(-jitter * h, jitter * h, size=pos.shape)
        pos[interior] += noise[interior]
    node = np.arange((r + 1) ** 2).reshape(r + 1, r + 1)  # node[row=j, col=i]
    a, b = node[:-1, :-1].ravel(), node[:-1, 1:].ravel()
    c, d = node[1:, :-1].ravel(), node[1:, 1:].ravel()
    elements = np.concatenate([np.column_stack([a, b, d]), np.column_stack([a, d, c])])
    mesh = Mesh(pos, elements)
    if (signed_areas(mesh) <= 0).any():
        raise MeshError("jitter inverted at least one triangle; lower it or change the seed")
    return mesh


def signed_areas(mesh):
    p = mesh.positions[mesh.elements]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def parameter_grid(ranges, counts):
    """Uniform tensor grid; the first parameter varies slowest."""
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(ranges, counts)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in grids])


def poisson_source(x, y):
    return 100.0 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)


def boundary_nodes(mesh, tol=1e-12):
    x, y = mesh.positions.T
    return (x < tol) | (x > 1 - tol) | (y < tol) | (y > 1 - tol)


def p1_matrices(mesh):
    """Linear-element stiffness matrix and lumped (diagonal) mass vector."""
    p = mesh.positions[mesh.elements]                      # T x 3 x 2
    area = np.abs(signed_areas(mesh))
    # gradients of the three hat functions: rotated opposite edges over 2 * area
    edges = np.roll(p, -1, axis=1) - np.roll(p, 1, axis=1)  # edge opposite vertex i
    grads = np.stack([edges[..., 1], -edges[..., 0]], axis=-1) / (2 * area)[:, None, None]
    local = np.einsum("tid,tjd->tij", grads, grads) * area[:, None, None]
    e = mesh.elements
    rows = np.repeat(e, 3, axis=1).ravel()
    cols = np.tile(e, (1, 3)).ravel()
    n = mesh.num_nodes
    stiff = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    mass = np.bincount(e.ravel(), weights=np.repeat(area / 3.0, 3), minlength=n)
    return stiff, mass


def solve_nonlinear_poisson(mesh, mu, source=poisson_source, tol=1e-12, max_iter=50, matrices=None):
    """Newton solve of -laplace(u) + mu_1 (exp(mu_2 u) - 1) / mu_2 = source, u = 0 on the boundary.

    Linear elements with a lumped mass matrix; the sink is monotone, so the
    Jacobian stays positive definite and Newton from u = 0 converges.
    """
    m1, m2 = float(mu[0]), float(mu[1])
    if m2 <= 0:
        raise ValueError("the nonlinearity parameter mu_2 must be positive")
    stiff, mass = p1_matrices(mesh) if matrices is None else matrices
    free = ~boundary_nodes(mesh)
    k = stiff[free][:, free].tocsc()
    w = mass[free]
    rhs = w * source(*mesh.positions[free].T)
    u = np.zeros(free.sum())
    scale = max(np.linalg.norm(rhs), 1.0)
    for _ in range(max_iter):
        res = k @ u + w * m1 * np.expm1(m2 * u) / m2 - rhs
        if np.linalg.norm(res) <= tol * scale:
            break
        jac = k + sp.diags(w * m1 * np.exp(m2 * u))
        u = u - spsolve(jac.tocsc(), res)
    else:
        raise NumericalError(f"Newton did not converge for mu = {mu}")
    out = np.zeros(mesh.num_nodes)
    out[free] = u
    return out


def front_field(x, y, mu):
    """tanh((x + y - mu_2) / 10^-mu_1)."""
    return np.tanh((x + y - mu[1]) * 10.0 ** mu[0])


def branch(mu1, mu_c):
    return np.where(np.asarray(mu1) >= mu_c, 1.0, -1.0)


def bifurcating_field(x, y, mu, mu_c=0.5):
    """Two components; the antisymmetric part flips sign when mu_1 crosses mu_c."""
    s = branch(mu[0], mu_c)
    bump = np.sin(np.pi * x) * np.sin(np.pi * y)
    asym = np.sin(2 * np.pi * x) * np.sin(np.pi * y)
    amp = 0.5 + abs(mu[0] - mu_c)
    u = bump * (1.0 + mu[1] * x) + s * amp * asym
    v = mu[1] * bump * y + s * amp * np.sin(np.pi * x) * np.sin(2 * np.pi * y)
    return np.stack([u, v], axis=-1)


@dataclass
class SyntheticFamily:
    family: str = "smooth"
    resolution: int = 29
    jitter: float = 0.2
    mesh_seed: int = 0
    ranges: list = field(default_factory=list)
    counts: tuple = (10, 10)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if not self.ranges:
            self.ranges = list(DEFAULT_RANGES[self.family])

    @property
    def mu_c(self):
        return 0.5 * (self.ranges[0][0] + self.ranges[0][1])


DEFAULT_RANGES = {
    "smooth": [(0.01, 10.0), (0.01, 10.0)],
    "front": [(0.0, 1.0), (0.6, 1.4)],
    "bifurcating": [(0.0, 1.0), (0.0, 1.0)],
}


def evaluate_family(family, positions, mu, mu_c=0.5):
    x, y = positions[:, 0], positions[:, 1]
    if family == "front":
        return front_field(x, y, mu)[:, None]
    if family == "bifurcating":
        return bifurcating_field(x, y, mu, mu_c)
    raise ValueError(f"unknown family {family!r}")


def generate_dataset(spec, mesh=None):
    """Evaluate the family at every mesh node for every grid parameter."""
    if mesh is None:
        mesh = generate_mesh(spec.resolution, spec.jitter, spec.mesh_seed)
    params = parameter_grid(spec.ranges, spec.counts)
    if spec.family == "smooth":
        mats = p1_matrices(mesh)
        fields = np.stack([solve_nonlinear_poisson(mesh, mu, matrices=mats)[:, None] for mu in params])
    else:
        fields = np.stack([evaluate_family(spec.family, mesh.positions, mu, spec.mu_c) for mu in params])
    labels = (branch(params[:, 0], spec.mu_c) > 0).astype(np.int64) if spec.family == "bifurcating" else None
    return SnapshotDataset(params, fields, mesh, name=spec.family, labels=labels)
