"""On-disk formats: dataset directories, GCAF field matrices, VTK export, CSV reports.

A dataset directory holds::

    manifest.txt   key = value lines (name, n_s, n_h, p, d and the file names)
    nodes.csv      x,y per mesh node
    elements.csv   a,b,c node ids per triangle
    params.csv     mu_0,...,mu_{P-1} per snapshot
    fields.gcaf    binary snapshot matrix (see write_fields)
    labels.csv     optional ground-truth regime label per snapshot
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .graph import Mesh
from .pipeline import SnapshotDataset

FIELDS_MAGIC = b"GCAF"
FIELDS_VERSION = 1
_HEADER = struct.Struct("<4sIQQQ")


def write_fields(path, fields):
    """'GCAF', u32 version, u64 N_S, N_h, d, then little-endian float64 payload."""
    fields = np.asarray(fields, dtype="<f8")
    n_s, n_h, d = fields.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELDS_MAGIC, FIELDS_VERSION, n_s, n_h, d))
        fh.write(np.ascontiguousarray(fields).tobytes())


def read_fields(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: too short for a field header")
    magic, version, n_s, n_h, d = _HEADER.unpack_from(raw)
    if magic != FIELDS_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != FIELDS_VERSION:
        raise DataError(f"{path}: unsupported field file version {version}")
    payload = raw[_HEADER.size:]
    if len(payload) != 8 * n_s * n_h * d:
        raise DataError(f"{path}: header declares {n_s}x{n_h}x{d} values but payload holds {len(payload) // 8}")
    return np.frombuffer(payload, dtype="<f8").reshape(n_s, n_h, d).astype(np.float64)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _read_csv(path, dtype):
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing dataset file {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    try:
        return np.array([[dtype(v) for v in r] for r in rows[1:]], dtype=dtype).reshape(len(rows) - 1, -1)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def read_manifest(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing dataset manifest {path}")
    out = {}
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def save_dataset(dataset, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_csv(d / "nodes.csv", ["x", "y"], dataset.mesh.positions.tolist())
    _write_csv(d / "elements.csv", ["a", "b", "c"], dataset.mesh.elements.tolist())
    _write_csv(d / "params.csv", [f"mu_{i}" for i in range(dataset.params.shape[1])], dataset.params.tolist())
    write_fields(d / "fields.gcaf", dataset.fields)
    manifest = {
        "name": dataset.name, "n_s": dataset.num_samples, "n_h": dataset.mesh.num_nodes,
        "p": dataset.params.shape[1], "d": dataset.num_components,
        "nodes": "nodes.csv", "elements": "elements.csv", "params": "params.csv", "fields": "fields.gcaf",
    }
    if dataset.labels is not None:
        _write_csv(d / "labels.csv", ["label"], [[int(v)] for v in dataset.labels])
        manifest["labels"] = "labels.csv"
    (d / "manifest.txt").write_text("".join(f"{k} = {v}\n" for k, v in manifest.items()))


def load_dataset(directory):
    d = Path(directory)
    man = read_manifest(d / "manifest.txt")
    try:
        n_s, n_h, p, dim = (int(man[k]) for k in ("n_s", "n_h", "p", "d"))
    except KeyError as exc:
        raise DataError(f"manifest lacks {exc}") from None
    positions = _read_csv(d / man.get("nodes", "nodes.csv"), float)
    elements = _read_csv(d / man.get("elements", "elements.csv"), int)
    params = _read_csv(d / man.get("params", "params.csv"), float)
    fields = read_fields(d / man.get("fields", "fields.gcaf"))
    if positions.shape != (n_h, 2):
        raise DataError(f"manifest declares {n_h} nodes, nodes file has shape {positions.shape}")
    if params.shape != (n_s, p):
        raise DataError(f"manifest declares {n_s} x {p} parameters, params file has shape {params.shape}")
    if fields.shape != (n_s, n_h, dim):
        raise DataError(f"manifest declares fields {(n_s, n_h, dim)}, file holds {fields.shape}")
    for name, arr in (("nodes", positions), ("params", params), ("fields", fields)):
        if not np.isfinite(arr).all():
            raise DataError(f"{name} contain non-finite values")
    labels = None
    if "labels" in man:
        labels = _read_csv(d / man["labels"], int).ravel()
    return SnapshotDataset(params, fields, Mesh(positions, elements), man.get("name", d.name), labels)


# -- VTK --------------------------------------------------------------------

def export_vtk(mesh, fields, path, title="gcarom field"):
    """Legacy ASCII unstructured grid with one SCALARS block per component.

    ``fields`` maps names to arrays of N_h or N_h x d values; a bare array is
    named ``u``. Vector fields become ``name_0``, ``name_1``, ...
    """
    if not isinstance(fields, dict):
        fields = {"u": fields}
    n = mesh.num_nodes
    blocks = []
    for name, arr in fields.items():
        arr = np.asarray(arr, dtype=np.float64).reshape(n, -1) if np.size(arr) % n == 0 else None
        if arr is None:
            raise DataError(f"field {name!r} does not have a multiple of {n} values")
        if arr.shape[1] == 1:
            blocks.append((name, arr[:, 0]))
        else:
            blocks.extend((f"{name}_{i}", arr[:, i]) for i in range(arr.shape[1]))
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.positions.tolist()]
    t = len(mesh.elements)
    lines.append(f"CELLS {t} {4 * t}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.elements.tolist()]
    lines.append(f"CELL_TYPES {t}")
    lines += ["5"] * t
    lines.append(f"POINT_DATA {n}")
    for name, vals in blocks:
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [repr(v) for v in vals.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk(path):
    """Parse files written by :func:`export_vtk`; returns (positions, triangles, cell types, scalars)."""
    tokens = Path(path).read_text().split("\n")
    i = 0
    positions = cells = types = None
    scalars = {}
    while i < len(tokens):
        parts = tokens[i].split()
        if not parts:
            i += 1
            continue
        key = parts[0]
        if key == "POINTS":
            n = int(parts[1])
            positions = np.array([[float(v) for v in tokens[i + 1 + j].split()[:2]] for j in range(n)])
            i += n + 1
        elif key == "CELLS":
            t = int(parts[1])
            cells = np.array([[int(v) for v in tokens[i + 1 + j].split()[1:]] for j in range(t)])
            i += t + 1
        elif key == "CELL_TYPES":
            t = int(parts[1])
            types = np.array([int(tokens[i + 1 + j]) for j in range(t)])
            i += t + 1
        elif key == "SCALARS":
            n = positions.shape[0]
            scalars[parts[1]] = np.array([float(tokens[i + 2 + j]) for j in range(n)])
            i += n + 2
        else:
            i += 1
    return positions, cells, types, scalars


# -- reports ----------------------------------------------------------------

def write_error_csv(path, params, rows):
    """``rows`` are (sample id, split, {column: value}) triples, written with the sample's parameters."""
    rows = list(rows)
    cols = list(rows[0][2]) if rows else []
    header = ["sample"] + [f"mu_{i}" for i in range(params.shape[1])] + cols + ["split"]
    _write_csv(path, header, ([int(i)] + params[i].tolist() + [vals[c] for c in cols] + [tag]
                              for i, tag, vals in rows))


def write_cluster_csv(path, params, labels):
    _write_csv(path, [f"mu_{i}" for i in range(params.shape[1])] + ["label"],
               (params[i].tolist() + [int(labels[i])] for i in range(len(labels))))


def write_table_csv(path, header, rows):
    _write_csv(path, header, rows)
