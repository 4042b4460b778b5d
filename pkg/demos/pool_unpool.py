"""Pooling keeps a random share of the nodes; unpooling interpolates back with k-NN.

    python3 demos/pool_unpool.py
"""
import warnings

import numpy as np

from gcarom.graph import build_graph, component_sizes
from gcarom.sampling import make_pool_mask, pool, unpool_knn
from gcarom.synthetic import generate_mesh
from gcarom.tensor import Tensor

warnings.filterwarnings("ignore", "pooled graph is disconnected")  # component counts are printed below

mesh = generate_mesh(20, 0.25, seed=4)
graph = build_graph(mesh)
x, y = mesh.positions.T
fields = {"constant": np.full_like(x, 2.5), "linear": x + 2 * y, "wave": np.sin(2 * np.pi * x) * np.cos(np.pi * y)}

for rate in (90, 70, 50, 30):
    mask = make_pool_mask(mesh.num_nodes, rate, seed=0)
    coarse = pool(graph, mask)
    parts = len(component_sizes(coarse.num_nodes, coarse.edges))
    line = [f"r_p = {rate:2d}%: {mask.kept.size:3d} nodes, {parts} component(s)"]
    for name, u in fields.items():
        back = unpool_knn(mesh.positions[mask.kept], Tensor(u[mask.kept, None]), mesh.positions, k=3).data[:, 0]
        line.append(f"{name} {np.linalg.norm(back - u) / np.linalg.norm(u):.1e}")
    print("  ".join(line))
