"""Look inside the backbone: patch nodes, their k-NN graph and the pyramid it produces.

    python3 demos/patch_graph.py
"""
import numpy as np

from spgnn.config import desk_config
from spgnn.detector import Spgnn
from spgnn.msgcn import MsgcnConfig, pyramid_shapes
from spgnn.nn import make_rng
from spgnn.patch_graph import Stem, grid_to_nodes, knn_graph
from spgnn.synth import render_sample

pixels, _ = render_sample(make_rng(1), 224, 1)

# the stem turns a 224 x 224 image into a 56 x 56 grid of patch nodes
stem = Stem(16, make_rng(0))
nodes = grid_to_nodes(stem(pixels))
print("patch nodes:", nodes.shape)

table = knn_graph(nodes.data, 9)
node = 56 * 28 + 28        # the centre patch
rows, cols = np.divmod(table[node], 56)
print("neighbours of the centre patch (row, col):", list(zip(rows.tolist(), cols.tolist())))
print("mean grid distance to neighbours:", np.hypot(rows - 28, cols - 28)[1:].mean().round(1),
      "(feature neighbours are not just spatial neighbours)")

# full-size architecture at 896 px, as a pure shape table
table = pyramid_shapes(MsgcnConfig(), 896, 896)
for name in ("stages", "fpn", "superpixel_fpn"):
    print(f"{name:15s}", table[name])
print(f"{'recovered':15s}", table["recovered"])

# the desk profile actually runs on a 224 px image
model = Spgnn(desk_config())
levels = model.pyramid(model.prepare(pixels))
print("desk pyramid:", [p.shape for p in levels])
print("desk parameters:", sum(p.data.size for p in model.parameters()))
