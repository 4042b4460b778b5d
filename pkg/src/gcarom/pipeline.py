"""Normalization, splitting, the training loop and checkpoints."""
from __future__ import annotations

import io
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .analysis import error_report
from .errors import CheckpointError, DataError, NumericalError
from .graph import Mesh, build_graph
from .model import GcaModel, config_from_text, config_to_text, loss_total, stack_fields, unstack_fields
from .sampling import PoolMask
from .seeding import child_rng, make_rng

STD_FLOOR = 1e-12


@dataclass
class SnapshotDataset:
    params: np.ndarray   # N_S x P
    fields: np.ndarray   # N_S x N_h x d
    mesh: Mesh
    name: str = "dataset"
    labels: np.ndarray = None  # optional ground-truth regime labels

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64).reshape(len(self.params), -1)
        self.fields = np.asarray(self.fields, dtype=np.float64)
        if self.fields.ndim == 2:
            self.fields = self.fields[:, :, None]
        if self.fields.shape[0] != self.params.shape[0]:
            raise DataError(f"{self.params.shape[0]} parameter rows but {self.fields.shape[0]} snapshots")
        if self.fields.shape[1] != self.mesh.num_nodes:
            raise DataError(f"snapshots have {self.fields.shape[1]} nodes, mesh has {self.mesh.num_nodes}")
        if not (np.isfinite(self.params).all() and np.isfinite(self.fields).all()):
            raise DataError("dataset contains non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def num_samples(self):
        return self.fields.shape[0]

    @property
    def num_components(self):
        return self.fields.shape[2]

    def select_components(self, components):
        if components is None:
            return self
        return SnapshotDataset(self.params, self.fields[:, :, list(components)], self.mesh, self.name, self.labels)


# -- normalization ----------------------------------------------------------

@dataclass
class NormalizationStats:
    node_mean: np.ndarray
    node_std: np.ndarray
    sample_mean: np.ndarray
    sample_std: np.ndarray
    floor: float = STD_FLOOR


def _floored_std(x, axis):
    s = x.std(axis=axis)
    return np.where(s < STD_FLOOR, 1.0, s)


def normalize(fields):
    """Column (node-wise) then row (sample-wise) standardization.

    ``fields`` is N_S x N_h x d (or N_S x K). Standard deviations below 1e-12
    are replaced by 1, so constant columns are only shifted.
    """
    fields = np.asarray(fields, dtype=np.float64)
    x = fields.reshape(fields.shape[0], -1)
    if x.shape[0] < 2:
        raise DataError("normalization needs at least two snapshots")
    if not np.isfinite(x).all():
        raise DataError("cannot normalize non-finite snapshots")
    cm = x.mean(axis=0)
    cs = _floored_std(x, 0)
    y = (x - cm) / cs
    rm = y.mean(axis=1)
    rs = _floored_std(y, 1)
    z = (y - rm[:, None]) / rs[:, None]
    return z.reshape(fields.shape), NormalizationStats(cm, cs, rm, rs)


def row_stats(normalized_columns):
    """Row-stage statistics of column-normalized snapshots (K x M)."""
    return normalized_columns.mean(axis=1), _floored_std(normalized_columns, 1)


def denormalize(z, stats, sample_ids):
    """Invert both stages for snapshots whose row statistics are in ``stats``."""
    z = np.asarray(z, dtype=np.float64)
    ids = np.asarray(sample_ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= stats.sample_mean.size):
        raise KeyError(f"sample ids outside 0..{stats.sample_mean.size - 1} have no row statistics")
    x = z.reshape(ids.size, -1)
    y = x * stats.sample_std[ids, None] + stats.sample_mean[ids, None]
    return (y * stats.node_std + stats.node_mean).reshape(z.shape)


def column_normalize(fields, stats):
    x = np.asarray(fields, dtype=np.float64)
    return ((x.reshape(x.shape[0], -1) - stats.node_mean) / stats.node_std).reshape(x.shape)


# -- splitting and parameter scaling ---------------------------------------

def train_size(n_s, r_t):
    # rounding guards 0.3 * 100 = 30.000000000000004 against ceil
    return math.ceil(round(r_t * n_s / 100.0, 9))


def split(n_s, r_t, seed):
    """Seeded shuffle; the first ceil(r_t% * N_S) ids train, the rest test. Both sorted."""
    if not 0 < r_t < 100:
        raise ValueError(f"training rate must lie in (0, 100), got {r_t}")
    n_tr = train_size(n_s, r_t)
    if n_tr < 1 or n_tr >= n_s:
        raise ValueError(f"split of {n_s} samples at {r_t}% leaves an empty side")
    order = make_rng(seed).permutation(n_s)
    return np.sort(order[:n_tr]), np.sort(order[n_tr:])


@dataclass
class ParamScaler:
    """Affine map of each parameter component onto [-1, 1] from training min/max."""
    low: np.ndarray
    high: np.ndarray

    @classmethod
    def fit(cls, params):
        params = np.asarray(params, dtype=np.float64)
        return cls(params.min(axis=0), params.max(axis=0))

    def __call__(self, params):
        params = np.atleast_2d(np.asarray(params, dtype=np.float64))
        span = self.high - self.low
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, 2.0 * (params - self.low) / safe - 1.0, 0.0)


# -- training ---------------------------------------------------------------

@dataclass
class TrainHistory:
    mse: list = field(default_factory=list)
    btt: list = field(default_factory=list)
    total: list = field(default_factory=list)
    wall_time: float = 0.0
    seed: int = 0
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.total)

    def to_csv(self):
        rows = ["epoch,l_mse,l_btt,total"]
        rows += [f"{i},{m!r},{b!r},{t!r}" for i, (m, b, t) in enumerate(zip(self.mse, self.btt, self.total))]
        return "\n".join(rows) + "\n"


@dataclass
class Rom:
    """A trained surrogate: network plus everything needed to map parameters to physical fields."""
    model: GcaModel
    stats: NormalizationStats
    scaler: ParamScaler
    train_ids: np.ndarray
    test_ids: np.ndarray

    @property
    def config(self):
        return self.model.config

    @property
    def mesh(self):
        return self.model.mesh

    def normalized(self, dataset, ids=None):
        """Snapshots of the training dataset normalized with the stored statistics."""
        fields = dataset.select_components(self.config.components).fields
        if fields.shape[0] != self.stats.sample_mean.size:
            raise DataError(f"normalization covers {self.stats.sample_mean.size} samples, "
                            f"dataset has {fields.shape[0]}")
        ids = np.arange(fields.shape[0]) if ids is None else np.asarray(ids)
        cols = column_normalize(fields[ids], self.stats).reshape(len(ids), -1)
        z = (cols - self.stats.sample_mean[ids, None]) / self.stats.sample_std[ids, None]
        return z.reshape((len(ids),) + fields.shape[1:])

    def latents(self, normalized_fields):
        """Encoder codes for N_S x N_h x d normalized snapshots."""
        z = np.asarray(normalized_fields)
        return self.model.encode(stack_fields(z)).data

    def predict_normalized(self, params):
        params = np.atleast_2d(params)
        out = self.model.predict(self.scaler(params)).data
        return unstack_fields(out, params.shape[0])

    def predict(self, params, sample_ids):
        """Physical fields for dataset samples; row statistics come from ``sample_ids``."""
        return denormalize(self.predict_normalized(params), self.stats, sample_ids)

    def reconstruct_normalized(self, normalized_fields):
        z = np.asarray(normalized_fields)
        return unstack_fields(self.model.reconstruct(stack_fields(z)).data, z.shape[0])


def make_model(config, mesh, mask=None):
    graph = build_graph(mesh, pseudo_dim=config.pseudo_dim)
    model = GcaModel(config, graph, mask)
    model.mesh = mesh
    return model


def _check_dims(config, dataset):
    if dataset.mesh.num_nodes != config.n_h:
        raise DataError(f"config n_h = {config.n_h} but mesh has {dataset.mesh.num_nodes} nodes")
    if dataset.num_components != config.d:
        raise DataError(f"config d = {config.d} but dataset has {dataset.num_components} components")
    if dataset.params.shape[1] != config.P:
        raise DataError(f"config P = {config.P} but dataset has {dataset.params.shape[1]} parameters")


def train(config, dataset, *, log_every=0, log=print):
    """Fit the autoencoder and parameter map with Adam on the normalized training split.

    Returns the trained :class:`Rom` and its :class:`TrainHistory`.
    """
    dataset = dataset.select_components(config.components)
    _check_dims(config, dataset)
    z, stats = normalize(dataset.fields)
    train_ids, test_ids = split(dataset.num_samples, config.r_t, config.seed)
    scaler = ParamScaler.fit(dataset.params[train_ids])
    model = make_model(config, dataset.mesh)
    rom = Rom(model, stats, scaler, train_ids, test_ids)
    history = TrainHistory(seed=config.seed, config=config.as_dict())

    params = model.params()
    state = T.AdamState.for_params(params)
    mu_all = scaler(dataset.params[train_ids])
    u_all = z[train_ids]
    n_tr = len(train_ids)
    bsize = config.batch if 0 < config.batch < n_tr else n_tr
    full = (stack_fields(u_all), T.Tensor(mu_all))
    shuffle_rng = child_rng(config.seed, 2)
    start = time.perf_counter()
    for epoch in range(config.epochs):
        if bsize == n_tr:
            batches = [full]
        else:
            order = shuffle_rng.permutation(n_tr)
            batches = [(stack_fields(u_all[idx]), T.Tensor(mu_all[idx]))
                       for idx in np.array_split(order, math.ceil(n_tr / bsize))]
        sums = np.zeros(3)
        for u, mu in batches:
            for p in params:
                p.zero_grad()
            terms = loss_total(model, mu, u)
            vals = np.array([terms.mse.item(), terms.btt.item(), terms.total.item()])
            if not np.isfinite(vals).all():
                raise NumericalError(f"non-finite loss at epoch {epoch}: "
                                     f"l_mse={vals[0]}, l_btt={vals[1]}, total={vals[2]}")
            terms.total.backward()
            T.adam_step(params, state, config.lr, config.weight_decay)
            sums += vals * (u.shape[1] // config.d)
        sums /= n_tr
        history.mse.append(float(sums[0]))
        history.btt.append(float(sums[1]))
        history.total.append(float(sums[2]))
        if log_every and (epoch % log_every == 0 or epoch == config.epochs - 1):
            log(f"epoch {epoch:5d}  total {sums[2]:.6e}  mse {sums[0]:.6e}  btt {sums[1]:.6e}")
    history.wall_time = time.perf_counter() - start
    return rom, history


def evaluate(rom, dataset, ids=None):
    """Relative errors of the online prediction (parameters -> MLP -> decoder).

    Returns ``(physical, normalized)`` error reports. Physical fields are
    recovered with each sample's own row statistics, so ``ids`` must index
    the dataset the surrogate was trained on.
    """
    ids = rom.test_ids if ids is None else np.asarray(ids)
    truth_norm = rom.normalized(dataset, ids)
    dataset = dataset.select_components(rom.config.components)
    pred_norm = rom.predict_normalized(dataset.params[ids])
    pred = denormalize(pred_norm, rom.stats, ids)
    physical = error_report(dataset.fields[ids], pred, ids, "denormalized")
    normalized = error_report(truth_norm, pred_norm, ids, "normalized")
    return physical, normalized


# -- checkpoints ------------------------------------------------------------

MAGIC = b"GCAR"
VERSION = 1
_DTYPES = {0: "<f8", 1: "<i8"}


def _write_buffer(out, name, arr):
    arr = np.asarray(arr)
    code = 1 if np.issubdtype(arr.dtype, np.integer) else 0
    raw = name.encode()
    out.write(struct.pack("<H", len(raw)) + raw)
    out.write(struct.pack("<BI", code, arr.ndim))
    out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    out.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def _read_exact(stream, n):
    data = stream.read(n)
    if len(data) != n:
        raise CheckpointError("checkpoint is truncated")
    return data


def _read_buffer(stream):
    (nlen,) = struct.unpack("<H", _read_exact(stream, 2))
    name = _read_exact(stream, nlen).decode()
    code, ndim = struct.unpack("<BI", _read_exact(stream, 5))
    if code not in _DTYPES:
        raise CheckpointError(f"unknown buffer type {code} for {name}")
    shape = struct.unpack(f"<{ndim}Q", _read_exact(stream, 8 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(_read_exact(stream, 8 * count), dtype=_DTYPES[code]).reshape(shape)
    return name, arr.astype(np.float64 if code == 0 else np.int64)


def checkpoint_bytes(rom):
    model = rom.model
    buffers = {
        "mesh/positions": model.mesh.positions,
        "mesh/elements": model.mesh.elements,
        "stats/node_mean": rom.stats.node_mean,
        "stats/node_std": rom.stats.node_std,
        "stats/sample_mean": rom.stats.sample_mean,
        "stats/sample_std": rom.stats.sample_std,
        "scaler/low": rom.scaler.low,
        "scaler/high": rom.scaler.high,
        "split/train": rom.train_ids,
        "split/test": rom.test_ids,
    }
    if model.mask is not None:
        buffers["mask/kept"] = model.mask.kept
    for name, p in model.named_params().items():
        buffers[f"param/{name}"] = p.data
    out = io.BytesIO()
    cfg = config_to_text(model.config).encode()
    out.write(MAGIC + struct.pack("<I", VERSION))
    out.write(struct.pack("<I", len(cfg)) + cfg)
    out.write(struct.pack("<I", len(buffers)))
    for name, arr in buffers.items():
        _write_buffer(out, name, arr)
    return out.getvalue()


def save_checkpoint(rom, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(rom))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        stream = io.BytesIO(fh.read())
    magic = stream.read(4)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint: magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", _read_exact(stream, 4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (this build reads {VERSION})")
    (clen,) = struct.unpack("<I", _read_exact(stream, 4))
    config = config_from_text(_read_exact(stream, clen).decode())
    (count,) = struct.unpack("<I", _read_exact(stream, 4))
    buffers = dict(_read_buffer(stream) for _ in range(count))
    if stream.read(1):
        raise CheckpointError("trailing bytes after the last buffer")
    try:
        mesh = Mesh(buffers["mesh/positions"], buffers["mesh/elements"])
        mask = None
        if "mask/kept" in buffers:
            mask = PoolMask(buffers["mask/kept"], config.r_p, config.seed, config.n_h)
        model = make_model(config, mesh, mask)
        for name, p in model.named_params().items():
            arr = buffers[f"param/{name}"]
            if arr.shape != p.shape:
                raise CheckpointError(f"parameter {name} has shape {arr.shape}, expected {p.shape}")
            p.data[...] = arr
        stats = NormalizationStats(buffers["stats/node_mean"], buffers["stats/node_std"],
                                   buffers["stats/sample_mean"], buffers["stats/sample_std"])
        scaler = ParamScaler(buffers["scaler/low"], buffers["scaler/high"])
        return Rom(model, stats, scaler, buffers["split/train"], buffers["split/test"])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing buffer {exc}") from None
