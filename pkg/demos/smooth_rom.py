"""Train a graph autoencoder ROM on the smooth family and compare it with POD.

    python3 demos/smooth_rom.py [epochs] [out_dir]

The full 5000-epoch run takes about 4-5 minutes on one core; pass a smaller
epoch count for a quick look.
"""
import sys
from pathlib import Path

import numpy as np

from gcarom import io as gio
from gcarom.analysis import pod_basis, pod_projection_error
from gcarom.model import ModelConfig, count_parameters
from gcarom.pipeline import evaluate, save_checkpoint, train
from gcarom.synthetic import SyntheticFamily, generate_dataset

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_smooth")
out.mkdir(exist_ok=True)

# 100 snapshots on a jittered 30 x 30 node mesh, parameters on a 10 x 10 grid
ds = generate_dataset(SyntheticFamily("smooth"))
print(f"{ds.num_samples} snapshots, {ds.mesh.num_nodes} nodes, params in {ds.params.min(0)} .. {ds.params.max(0)}")

# defaults: n=15, lambda=10, hcp=3, ffn=100, n_l=50
cfg = ModelConfig(n_h=ds.mesh.num_nodes, d=1, epochs=epochs)
total, blocks = count_parameters(cfg)
print(f"{total} trainable parameters: {blocks}")

rom, hist = train(cfg, ds, log_every=max(epochs // 10, 1))
phys, norm = evaluate(rom, ds)
print(f"GCA test error: mean {phys.mean:.3e}  max {phys.max:.3e}  ({hist.wall_time:.0f} s)")

# linear baseline on the same split
for modes in (5, 10, 15):
    rep = pod_projection_error(pod_basis(ds.fields[rom.train_ids], modes), ds.fields[rom.test_ids])
    print(f"POD N = {modes:2d} test error: mean {rep.mean:.3e}")

# worst test sample as a VTK file (truth, prediction, pointwise error)
worst = int(phys.ids[np.argmax(phys.errors)])
pred = rom.predict(ds.params[[worst]], [worst])[0]
gio.export_vtk(ds.mesh, {"truth": ds.fields[worst], "prediction": pred,
                         "abs_error": np.abs(ds.fields[worst] - pred)}, out / "worst.vtk")
save_checkpoint(rom, out / "model.gcar")
print(f"worst sample {worst} (mu = {ds.params[worst]}) written to {out / 'worst.vtk'}")
