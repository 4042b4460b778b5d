"""Command-line driver: ``gcarom <generate|train|evaluate|pod|cluster|sweep> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every command writes ``run.txt`` (version, seed, config, argv) into its
output directory so the run can be repeated.
"""
from __future__ import annotations

import argparse
import itertools
import subprocess
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import io as gio
from .analysis import detect_regimes, cluster_agreement, pod_basis, pod_projection_error
from .errors import CheckpointError, DataError, MeshError, NumericalError
from .model import config_from_text, config_to_text, count_parameters
from .pipeline import evaluate, load_checkpoint, save_checkpoint, split, train
from .synthetic import FAMILIES, SyntheticFamily, generate_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

# default hyperparameter grid for sweeps: 3 x 3 x 2 = 18 runs
DEFAULT_GRID = {"r_t": "10,30,50", "lambda": "0.1,1,10", "n": "15,25"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def version_string():
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_run_manifest(out_dir, argv, seed=None, config=None):
    lines = [f"version = {version_string()}", f"command = {' '.join(argv)}"]
    if seed is not None:
        lines.append(f"seed = {seed}")
    text = "\n".join(lines) + "\n"
    if config is not None:
        text += "\n[config]\n" + config_to_text(config)
    Path(out_dir, "run.txt").write_text(text)


def _out_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _pairs(text, cast=float):
    return [cast(v) for v in text.split(",") if v.strip()]


def load_config(path, dataset, sets=(), components=None):
    """Read a key=value config; n_h, d and P default to the dataset's dimensions."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing config file {path}")
    text = path.read_text()
    for item in sets:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        text += f"\n{item}"
    if components is not None:
        text += f"\ncomponents = {components}"
    entries = []
    for line in text.splitlines():
        key, eq, val = line.split("#", 1)[0].partition("=")
        if eq:
            entries.append((key.strip(), val.strip()))
    present = {k for k, _ in entries}
    comps = [v for k, v in entries if k == "components"]
    sel = dataset.select_components(_parse_components(comps[-1]) if comps else None)
    defaults = {"n_h": sel.mesh.num_nodes, "d": sel.num_components, "P": sel.params.shape[1]}
    extra = "".join(f"\n{k} = {v}" for k, v in defaults.items() if k not in present)
    return config_from_text(text + extra)


def _parse_components(text):
    if text is None or text.lower() in ("all", ""):
        return None
    return tuple(int(c) for c in text.split(","))


# -- subcommands -----------------------------------------------------------

def cmd_generate(args, argv):
    ranges = None
    if args.ranges:
        vals = _pairs(args.ranges)
        if len(vals) % 2:
            raise UsageError("--ranges needs lo,hi pairs")
        ranges = list(zip(vals[0::2], vals[1::2]))
    spec = SyntheticFamily(args.family, args.resolution, args.jitter, args.seed, ranges or [],
                           tuple(_pairs(args.counts, int)))
    if len(spec.counts) != len(spec.ranges):
        raise UsageError(f"{len(spec.counts)} grid counts for {len(spec.ranges)} parameters")
    ds = generate_dataset(spec)
    out = _out_dir(args.out)
    gio.save_dataset(ds, out)
    write_run_manifest(out, argv, args.seed)
    print(f"{ds.name}: {ds.num_samples} snapshots on {ds.mesh.num_nodes} nodes -> {out}")


def cmd_train(args, argv):
    ds = gio.load_dataset(args.data)
    cfg = load_config(args.config, ds, args.set, args.components)
    out = _out_dir(args.out)
    total, _ = count_parameters(cfg)
    print(f"training {total} parameters for {cfg.epochs} epochs on {ds.name}")
    rom, hist = train(cfg, ds, log_every=args.log_every)
    save_checkpoint(rom, out / "model.gcar")
    (out / "history.csv").write_text(hist.to_csv())
    write_run_manifest(out, argv, cfg.seed, cfg)
    (out / "timing.txt").write_text(f"wall_time_s = {hist.wall_time:.3f}\n")
    print(f"final loss {hist.total[-1]:.6e} after {hist.wall_time:.1f} s -> {out}")


def _evaluate_into(rom, ds, out, vtk="worst"):
    phys, norm = evaluate(rom, ds)
    rows = [(int(i), "test", {"rel_error": float(e), "rel_error_normalized": float(en)})
            for i, e, en in zip(phys.ids, phys.errors, norm.errors)]
    gio.write_error_csv(out / "errors.csv", ds.params, rows)
    summary = [["mode", "count", "mean", "max"]]
    for rep in (phys, norm):
        s = rep.summary()
        summary.append([s["mode"], s["count"], s["mean"], s["max"]])
    gio.write_table_csv(out / "summary.csv", summary[0], summary[1:])
    if vtk != "none":
        sel = ds.select_components(rom.config.components)
        picks = phys.ids if vtk == "all" else [phys.ids[int(np.argmax(phys.errors))]]
        for i in picks:
            pred = rom.predict(sel.params[[i]], [i])[0]
            truth = sel.fields[i]
            gio.export_vtk(sel.mesh, {"truth": truth, "prediction": pred, "abs_error": np.abs(truth - pred)},
                           out / f"sample_{int(i):05d}.vtk")
    return phys, norm


def cmd_evaluate(args, argv):
    rom = load_checkpoint(args.checkpoint)
    ds = gio.load_dataset(args.data)
    out = _out_dir(args.out)
    phys, norm = _evaluate_into(rom, ds, out, args.vtk)
    write_run_manifest(out, argv, rom.config.seed, rom.config)
    for rep in (phys, norm):
        print(f"{rep.mode:>12}: mean {rep.mean:.4e}  max {rep.max:.4e}  over {rep.errors.size} test samples")


def cmd_pod(args, argv):
    ds = gio.load_dataset(args.data)
    sel = ds.select_components(_parse_components(args.components))
    train_ids, test_ids = split(ds.num_samples, args.r_t, args.seed)
    out = _out_dir(args.out)
    rows = []
    for modes in _pairs(args.modes, int):
        basis = pod_basis(sel.fields[train_ids], modes)
        rep = pod_projection_error(basis, sel.fields[test_ids], test_ids)
        rows.append([modes, rep.mean, rep.max])
        print(f"POD N = {modes:3d}: mean {rep.mean:.4e}  max {rep.max:.4e}")
    gio.write_table_csv(out / "pod.csv", ["modes", "mean", "max"], rows)
    write_run_manifest(out, argv, args.seed)


def cmd_cluster(args, argv):
    rom = load_checkpoint(args.checkpoint)
    ds = gio.load_dataset(args.data)
    out = _out_dir(args.out)
    z = rom.latents(rom.normalized(ds))
    fractions = tuple(range(20, 100, 10))
    res = detect_regimes(z, args.k, seed=args.seed, k_neighbors=args.neighbors, fractions=fractions)
    gio.write_cluster_csv(out / "clusters.csv", ds.params, res.labels)
    gio.write_table_csv(out / "knn_accuracy.csv", ["label_fraction", "accuracy"], sorted(res.accuracy.items()))
    if ds.labels is not None:
        agree = cluster_agreement(res.labels, ds.labels)
        (out / "agreement.txt").write_text(f"agreement = {agree!r}\n")
        print(f"agreement with stored labels: {agree:.4f}")
    print(f"k-NN accuracy over label fractions: min {res.min_accuracy:.4f}")
    write_run_manifest(out, argv, args.seed, rom.config)


def sweep_grid(specs):
    """``["r_t=10,30", "lambda=1"]`` -> list of override dicts over the Cartesian product."""
    axes = {}
    for spec in specs:
        key, _, vals = spec.partition("=")
        if not vals:
            raise UsageError(f"--grid expects key=v1,v2,..., got {spec!r}")
        axes[key.strip()] = [v.strip() for v in vals.split(",") if v.strip()]
    keys = list(axes)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys))]


def cmd_sweep(args, argv):
    grid_specs = args.grid or [f"{k}={v}" for k, v in DEFAULT_GRID.items()]
    combos = sweep_grid(grid_specs)
    out = _out_dir(args.out)
    keys = list(combos[0]) if combos else []
    if args.dry_run:
        for i, combo in enumerate(combos):
            print(f"run {i:03d}: " + ", ".join(f"{k}={v}" for k, v in combo.items()))
        gio.write_table_csv(out / "plan.csv", ["run"] + keys, [[i] + list(c.values()) for i, c in enumerate(combos)])
        write_run_manifest(out, argv)
        return
    ds = gio.load_dataset(args.data)
    rows = []
    for i, combo in enumerate(combos):
        sets = list(args.set) + [f"{k}={v}" for k, v in combo.items()]
        cfg = load_config(args.config, ds, sets, args.components)
        run_dir = _out_dir(out / f"run_{i:03d}")
        rom, hist = train(cfg, ds)
        save_checkpoint(rom, run_dir / "model.gcar")
        (run_dir / "history.csv").write_text(hist.to_csv())
        phys, norm = _evaluate_into(rom, ds, run_dir, "none")
        write_run_manifest(run_dir, argv, cfg.seed, cfg)
        rows.append([i] + list(combo.values()) + [phys.mean, phys.max, norm.mean, hist.total[-1]])
        print(f"run {i:03d} {combo}: mean {phys.mean:.4e}")
    gio.write_table_csv(out / "summary.csv", ["run"] + keys + ["mean", "max", "mean_normalized", "final_loss"], rows)
    write_run_manifest(out, argv)


def build_parser():
    p = _Parser(prog="gcarom", description="Graph convolutional autoencoder reduced order models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic snapshot dataset")
    g.add_argument("--family", choices=FAMILIES, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--resolution", type=int, default=29)
    g.add_argument("--jitter", type=float, default=0.2, help="node jitter in cell widths (< 0.5)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--counts", default="10,10", help="grid points per parameter")
    g.add_argument("--ranges", default=None, help="lo,hi pairs per parameter")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--components", default=None, help="comma-separated field components (default all)")
    t.add_argument("--log-every", type=int, default=500)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="test-split errors and VTK error fields")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--vtk", choices=("none", "worst", "all"), default="worst")
    e.set_defaults(func=cmd_evaluate)

    q = sub.add_parser("pod", help="POD projection baseline")
    q.add_argument("--data", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--modes", default="10", help="one or more comma-separated basis sizes")
    q.add_argument("--r-t", type=float, default=30.0)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--components", default=None)
    q.set_defaults(func=cmd_pod)

    c = sub.add_parser("cluster", help="latent-space regime detection")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--k", type=int, default=2)
    c.add_argument("--neighbors", type=int, default=5)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_cluster)

    s = sub.add_parser("sweep", help="train and evaluate over a hyperparameter grid")
    s.add_argument("--config", required=True)
    s.add_argument("--data", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--components", default=None)
    s.add_argument("--dry-run", action="store_true")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if args.command == "sweep" and not args.dry_run and args.data is None:
            raise UsageError("sweep: --data is required unless --dry-run is given")
        args.func(args, ["gcarom"] + argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (KeyError, ValueError) as exc:
        if isinstance(exc, (DataError, MeshError, CheckpointError)):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, NotADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
