"""Train the desk profile on a handful of synthetic images and check it memorises them.

Takes a few minutes on one core at the default 500 steps.

    python3 demos/overfit.py --steps 500 --out demo_out/overfit
"""
import argparse
import time
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from spgnn.config import desk_config
from spgnn.imageio import to_uint8
from spgnn.synth import CLASSES, SyntheticSpec, synth_samples
from spgnn.train import evaluate_model, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--fusion", choices=["concat", "add"], default="concat")
    ap.add_argument("--no-superpixels", action="store_true")
    ap.add_argument("--k", type=int, default=9)
    ap.add_argument("--out", default="demo_out/overfit")
    args = ap.parse_args()

    samples = synth_samples(SyntheticSpec(seed=0, size=224, n=8))
    cfg = desk_config(schedule__max_steps=args.steps, fusion__mode=args.fusion, model__k=args.k,
                      superpixel__enabled=not args.no_superpixels)
    start = time.time()

    def log(step, terms):
        if step == 1 or step % 50 == 0:
            print(f"step {step:4d}  total {terms['total']:.4f}  ({time.time() - start:.0f}s)", flush=True)

    res = train(cfg, samples, out_dir=args.out, log=log)
    totals = res.totals()
    print(f"loss {totals[0]:.3f} -> {totals[-1]:.3f} ({totals[0] / totals[-1]:.1f}x), "
          f"{(time.time() - start) / len(totals):.2f} s/step")

    rep = evaluate_model(res.model, samples)
    print(f"train-set AP50 {rep.AP50:.3f}  mAP {rep.mAP:.3f}  mAR {rep.mAR:.3f}")

    s = samples[0]
    dets = res.model.detect(res.model.prepare(s.pixels))
    img = Image.fromarray(to_uint8(s.pixels))
    draw = ImageDraw.Draw(img)
    for b in s.boxes:
        draw.rectangle(list(b), outline=(0, 255, 0))
    for d in dets[:5]:
        draw.rectangle(list(d.box), outline=(255, 60, 60))
        draw.text((d.box[0] + 2, d.box[1] + 2), f"{CLASSES[d.category - 1]} {d.score:.2f}", fill=(255, 60, 60))
    path = Path(args.out) / "image0.png"
    img.save(path)
    print("ground truth in green, top detections in red:", path)
    print("top detections:", [(CLASSES[d.category - 1], round(d.score, 3), np.round(d.box).tolist()) for d in dets[:3]])


if __name__ == "__main__":
    main()
