"""Detect the two solution branches of the bifurcating family from the latent codes alone.

    python3 demos/bifurcation_clustering.py [epochs]
"""
import sys

import numpy as np

from gcarom.analysis import cluster_agreement, detect_regimes
from gcarom.model import ModelConfig
from gcarom.pipeline import evaluate, train
from gcarom.synthetic import SyntheticFamily, generate_dataset

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
spec = SyntheticFamily("bifurcating")
ds = generate_dataset(spec)
print(f"branch switches at mu_1 = {spec.mu_c}; {ds.labels.sum()} of {ds.num_samples} snapshots on the upper branch")

rom, _ = train(ModelConfig(n_h=ds.mesh.num_nodes, d=2, epochs=epochs), ds, log_every=max(epochs // 5, 1))
phys, _ = evaluate(rom, ds)
print(f"test error: mean {phys.mean:.3e}  max {phys.max:.3e}")

# latent codes of every snapshot, clustered without looking at the labels
z = rom.latents(rom.normalized(ds))
res = detect_regimes(z)
print(f"spectral clusters agree with the branches on {100 * cluster_agreement(res.labels, ds.labels):.1f}% of snapshots")
for frac, acc in sorted(res.accuracy.items()):
    print(f"  k-NN trained on {frac}% of the cluster labels: accuracy {100 * acc:.1f}%")
