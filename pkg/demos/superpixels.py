"""Segment a synthetic blade image into superpixels and build the superpixel graph.

Writes the label map as a 16-bit PGM and a PNG with superpixel borders drawn in.

    python3 demos/superpixels.py --out /tmp/sp
"""
import argparse
from pathlib import Path

import numpy as np
from PIL import Image

from spgnn.imageio import to_uint8, write_pgm16
from spgnn.nn import make_rng
from spgnn.superpixel import build_superpixel_graph, slic_segment
from spgnn.synth import CLASSES, render_sample


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_out/superpixels")
    ap.add_argument("--m", type=int, default=196)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    pixels, defects = render_sample(make_rng(args.seed), 224, 2)
    print("defects:", ", ".join(CLASSES[c - 1] for c, _ in defects))

    spmap = slic_segment(pixels, args.m)
    print(f"asked for {args.m} superpixels, got {spmap.count}; sizes {spmap.sizes.min()}..{spmap.sizes.max()} px")

    graph = build_superpixel_graph(pixels, spmap)
    a = graph.adjacency
    off = a[~np.eye(len(a), dtype=bool)]
    print(f"adjacency weights: mean {off.mean():.3f}, {np.mean(off > 0.5):.1%} of pairs above 0.5")
    print("first node feature (mean RGB):", np.round(graph.features[0], 3))

    lab = spmap.labels
    edge = np.zeros(lab.shape, bool)
    edge[:, 1:] |= lab[:, 1:] != lab[:, :-1]
    edge[1:, :] |= lab[1:, :] != lab[:-1, :]
    rgb = to_uint8(pixels).copy()
    rgb[edge] = (255, 255, 0)
    Image.fromarray(rgb).save(out / "borders.png")
    write_pgm16(out / "labels.pgm", lab)
    print(f"wrote {out / 'borders.png'} and {out / 'labels.pgm'}")


if __name__ == "__main__":
    main()
