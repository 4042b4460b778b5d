"""Error metrics, the POD baseline and latent-space regime detection."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .seeding import make_rng


@dataclass
class ErrorReport:
    ids: np.ndarray
    errors: np.ndarray
    mode: str = "denormalized"

    @property
    def mean(self):
        return mean_relative_error(self.errors)

    @property
    def max(self):
        return float(np.max(self.errors))

    def summary(self):
        return {"mode": self.mode, "count": int(self.errors.size), "mean": self.mean, "max": self.max}


def relative_error(u_true, u_pred):
    """||u_true - u_pred||_2 / ||u_true||_2 over the flattened field."""
    u_true = np.asarray(u_true, dtype=np.float64).ravel()
    u_pred = np.asarray(u_pred, dtype=np.float64).ravel()
    if u_true.shape != u_pred.shape:
        raise ValueError(f"fields differ in size: {u_true.size} vs {u_pred.size}")
    ref = np.linalg.norm(u_true)
    if ref == 0:
        raise ValueError("relative error undefined for a zero reference field")
    return float(np.linalg.norm(u_true - u_pred) / ref)


def mean_relative_error(errors):
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("mean over an empty test set")
    return float(errors.mean())


def error_report(u_true, u_pred, ids, mode="denormalized"):
    errs = np.array([relative_error(t, p) for t, p in zip(u_true, u_pred)])
    return ErrorReport(np.asarray(ids), errs, mode)


# -- POD --------------------------------------------------------------------

@dataclass
class PodBasis:
    V: np.ndarray              # M x N orthonormal columns
    singular_values: np.ndarray  # all singular values of the snapshot matrix

    @property
    def modes(self):
        return self.V.shape[1]

    def project(self, fields):
        x = np.asarray(fields, dtype=np.float64).reshape(len(fields), -1)
        return (x @ self.V) @ self.V.T


def pod_basis(train_fields, modes):
    """Leading left singular vectors of the snapshot matrix (snapshots as columns)."""
    x = np.asarray(train_fields, dtype=np.float64)
    x = x.reshape(x.shape[0], -1)
    if not 1 <= modes <= min(x.shape):
        raise ValueError(f"{modes} modes requested but at most {min(x.shape)} are available")
    u, s, _ = np.linalg.svd(x.T, full_matrices=False)
    return PodBasis(u[:, :modes], s)


def pod_projection_error(basis, test_fields, ids=None):
    x = np.asarray(test_fields, dtype=np.float64).reshape(len(test_fields), -1)
    ids = np.arange(len(x)) if ids is None else np.asarray(ids)
    return error_report(x, basis.project(x), ids, mode="pod")


# -- clustering -------------------------------------------------------------

def pairwise_sq_distances(a, b=None):
    a = np.asarray(a, dtype=np.float64)
    b = a if b is None else np.asarray(b, dtype=np.float64)
    d2 = np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


def kmeans(points, k, seed=0, n_init=10, max_iter=300):
    """Lloyd iterations from k-means++ starts; returns the lowest-inertia labelling."""
    rng = make_rng(seed)
    x = np.asarray(points, dtype=np.float64)
    best, best_inertia = None, np.inf
    for _ in range(n_init):
        centers = [x[rng.integers(len(x))]]
        for _ in range(1, k):
            d2 = pairwise_sq_distances(x, np.array(centers)).min(axis=1)
            total = d2.sum()
            idx = rng.choice(len(x), p=d2 / total) if total > 0 else rng.integers(len(x))
            centers.append(x[idx])
        centers = np.array(centers)
        labels = None
        for _ in range(max_iter):
            new = pairwise_sq_distances(x, centers).argmin(axis=1)
            if labels is not None and np.array_equal(new, labels):
                break
            labels = new
            for j in range(k):
                if np.any(labels == j):
                    centers[j] = x[labels == j].mean(axis=0)
        inertia = pairwise_sq_distances(x, centers)[np.arange(len(x)), labels].sum()
        if inertia < best_inertia - 1e-12:
            best, best_inertia = labels.copy(), inertia
    return best


def median_bandwidth(points):
    d = np.sqrt(pairwise_sq_distances(points))
    iu = np.triu_indices(len(d), 1)
    return float(np.median(d[iu]))


def spectral_cluster(latents, k=2, sigma=None, seed=0):
    """Normalized spectral clustering with a Gaussian similarity.

    sigma defaults to the median pairwise distance. Eigenvectors of the k
    smallest eigenvalues of I - D^-1/2 W D^-1/2 are row-normalized and split
    by seeded k-means.
    """
    z = np.asarray(latents, dtype=np.float64)
    if len(z) < k:
        raise ValueError(f"need at least {k} points to form {k} clusters")
    sigma = median_bandwidth(z) if sigma is None else float(sigma)
    if sigma <= 0:
        raise ValueError("similarity bandwidth is zero (all latent vectors coincide)")
    w = np.exp(-pairwise_sq_distances(z) / (2.0 * sigma * sigma))
    np.fill_diagonal(w, 0.0)
    deg = w.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0))
    lap = np.eye(len(z)) - inv_sqrt[:, None] * w * inv_sqrt[None, :]
    _, vecs = np.linalg.eigh(lap)
    emb = vecs[:, :k]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.where(norms > 0, norms, 1.0)
    return kmeans(emb, k, seed)


def cluster_agreement(labels, truth):
    """Fraction of matching labels under the best relabelling of ``labels``."""
    labels, truth = np.asarray(labels), np.asarray(truth)
    classes = np.unique(np.concatenate([labels, truth]))
    best = 0.0
    for perm in itertools.permutations(classes):
        mapping = dict(zip(classes, perm))
        best = max(best, float(np.mean(np.array([mapping[v] for v in labels]) == truth)))
    return best


def knn_classify(train_points, train_labels, queries, k=5):
    """Majority vote among the k nearest training points.

    Ties go to the tied label whose member appears nearest.
    """
    x = np.asarray(train_points, dtype=np.float64)
    y = np.asarray(train_labels)
    if len(x) == 0:
        raise ValueError("k-NN needs a non-empty training set")
    if not 1 <= k <= len(x):
        raise ValueError(f"k = {k} must lie in 1..{len(x)}")
    d2 = pairwise_sq_distances(np.atleast_2d(queries), x)
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    out = np.empty(len(order), dtype=y.dtype)
    for i, nbrs in enumerate(order):
        votes = y[nbrs]
        labels, counts = np.unique(votes, return_counts=True)
        tied = set(labels[counts == counts.max()])
        out[i] = next(v for v in votes if v in tied)
    return out


def stratified_subset(labels, fraction, rng):
    """Indices of a per-class share ``fraction`` (percent) of ``labels``."""
    labels = np.asarray(labels)
    picked = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        n_take = int(round(fraction / 100.0 * members.size))
        if n_take < 1 or n_take >= members.size:
            raise ValueError(f"label fraction {fraction}% leaves class {c} empty on one side")
        picked.append(rng.permutation(members)[:n_take])
    return np.sort(np.concatenate(picked))


@dataclass
class ClusterResult:
    labels: np.ndarray
    accuracy: dict = field(default_factory=dict)  # label fraction (%) -> k-NN accuracy
    k: int = 5

    @property
    def min_accuracy(self):
        return min(self.accuracy.values())


def label_fraction_sweep(latents, labels, fractions=tuple(range(20, 100, 10)), seed=0, k=5):
    """Train k-NN on a stratified share of the cluster labels and score it on the rest."""
    z = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels)
    rng = make_rng(seed)
    table = {}
    for frac in fractions:
        if not 0 < frac < 100:
            raise ValueError(f"label fraction must lie in (0, 100), got {frac}")
        tr = stratified_subset(labels, frac, rng)
        te = np.setdiff1d(np.arange(len(z)), tr)
        pred = knn_classify(z[tr], labels[tr], z[te], k=min(k, tr.size))
        table[frac] = float(np.mean(pred == labels[te]))
    return table


def detect_regimes(latents, k_clusters=2, seed=0, k_neighbors=5, fractions=tuple(range(20, 100, 10))):
    labels = spectral_cluster(latents, k_clusters, seed=seed)
    table = label_fraction_sweep(latents, labels, fractions, seed, k_neighbors)
    return ClusterResult(labels, table, k_neighbors)
