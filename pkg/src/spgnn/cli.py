"""Command-line entry point: ``spgnn <command> [options]``.

Every command prints a single ``spgnn <command>: error: ...`` line to stderr
and exits nonzero when it fails.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import boxes as bx
from .checkpoint import read_checkpoint
from .config import RunConfig, config_from_dict, config_load
from .evaluation import evaluate
from .gradients import CASES, EPS, TOLERANCE, check_op
from .imageio import read_image, write_pgm16
from .msgcn import pyramid_shapes
from .nn import make_rng
from .patch_graph import Stem, grid_to_nodes, knn_graph
from .superpixel import (DEFAULT_COMPACTNESS, DEFAULT_ITERS, DEFAULT_M_TARGET, slic_segment,
                         superpixel_centroids)
from .synth import CLASSES, SyntheticSpec, load_dataset, synth_generate


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


def _write_json(path, obj) -> None:
    text = json.dumps(obj, indent=1)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n", encoding="utf-8")


def _load_config(args) -> RunConfig:
    cfg = config_load(args.config) if getattr(args, "config", None) else config_from_dict({})
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg.validate()


def pad_to_multiple(pixels: np.ndarray, multiple: int = 32) -> tuple[np.ndarray, dict]:
    """Reflection-pad bottom and right edges up to a multiple of ``multiple`` (at least one multiple)."""
    _, h, w = pixels.shape
    ph = max(multiple, -(-h // multiple) * multiple) - h
    pw = max(multiple, -(-w // multiple) * multiple) - w
    meta = {"original_size": [h, w], "padded_size": [h + ph, w + pw], "padded": bool(ph or pw),
            "pad_mode": "reflect"}
    if ph or pw:
        pixels = np.pad(pixels, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    return pixels, meta


def cmd_synth(args) -> None:
    spec = SyntheticSpec(seed=args.seed, size=args.size, n=args.n, min_defects=args.min_defects,
                         max_defects=args.max_defects)
    if spec.size % 32 or spec.size < 64:
        raise CliError("--size must be a multiple of 32 and at least 64")
    out = synth_generate(spec, args.out)
    print(f"wrote {spec.n} images and gt.json to {out}")


def cmd_train(args) -> None:
    from .train import train

    cfg = _load_config(args)
    if args.data:
        cfg.paths.data = args.data
    if args.out:
        cfg.paths.out = args.out
    if args.steps is not None:
        cfg.schedule.max_steps = args.steps
    if not (Path(cfg.paths.data) / "gt.json").exists():
        raise CliError(f"dataset not found: {cfg.paths.data}/gt.json")
    start = time.time()

    def log(step, terms):
        if step == 1 or step % args.log_every == 0:
            print(f"step {step:5d}  total {terms['total']:.4f}  ({time.time() - start:.0f}s)", flush=True)

    result = train(cfg, out_dir=cfg.paths.out, log=None if args.quiet else log)
    print(f"checkpoint: {result.checkpoint}")


def _model_from_checkpoint(args):
    from .train import load_model

    if not Path(args.checkpoint).exists():
        raise CliError(f"checkpoint not found: {args.checkpoint}")
    if args.config:
        cfg = _load_config(args)
    else:
        _, extra = read_checkpoint(args.checkpoint)
        if "config" not in extra:
            raise CliError("checkpoint carries no config; pass --config")
        cfg = config_from_dict(extra["config"])
    return load_model(cfg, args.checkpoint)


def _draw_overlay(path, pixels: np.ndarray, dets: list) -> None:
    from PIL import Image, ImageDraw

    img = Image.fromarray(np.round(np.clip(pixels, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0))
    draw = ImageDraw.Draw(img)
    palette = [(255, 60, 60), (60, 200, 255), (255, 200, 40), (120, 255, 120), (220, 120, 255)]
    for d in dets:
        x, y, w, h = d["bbox"]
        color = palette[(d["category_id"] - 1) % len(palette)]
        draw.rectangle([x, y, x + w, y + h], outline=color, width=2)
        name = CLASSES[d["category_id"] - 1] if d["category_id"] <= len(CLASSES) else str(d["category_id"])
        draw.text((x + 2, max(0, y - 11)), f"{name} {d['score']:.2f}", fill=color)
    img.save(path)


def cmd_detect(args) -> None:
    model = _model_from_checkpoint(args)
    if args.data:
        samples = load_dataset(args.data)
        dets = []
        for s in samples:
            dets.extend(d.to_json(s.image_id) for d in model.detect(model.prepare(s.pixels)))
        _write_json(args.out, dets)
        return
    if not args.image:
        raise CliError("pass --image or --data")
    if not Path(args.image).exists():
        raise CliError(f"image not found: {args.image}")
    pixels = read_image(args.image)
    padded, meta = pad_to_multiple(pixels)
    h, w = meta["original_size"]
    found = []
    for d in model.detect(model.prepare(padded)):
        box = bx.clip(d.box[None], h, w)[0]
        if box[2] > box[0] and box[3] > box[1]:
            d.box = box
            found.append(d.to_json(args.image_id))
    _write_json(args.out, {"image": str(args.image), "meta": meta, "detections": found})
    if args.overlay:
        _draw_overlay(args.overlay, pixels, found)


def _read_detections(path) -> list:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = data.get("detections")
    if not isinstance(data, list):
        raise CliError(f"{path}: expected a list of detections")
    return data


def cmd_eval(args) -> None:
    for p in (args.gt, args.dets):
        if not Path(p).exists():
            raise CliError(f"file not found: {p}")
    gt = json.loads(Path(args.gt).read_text(encoding="utf-8"))
    report = evaluate(_read_detections(args.dets), gt)
    _write_json(args.out, report.to_dict())


def cmd_superpixel(args) -> None:
    if not Path(args.image).exists():
        raise CliError(f"image not found: {args.image}")
    pixels = read_image(args.image)
    spmap = slic_segment(pixels, args.m, args.compactness, args.iters)
    summary = {"count": int(spmap.count), "min_size": int(spmap.sizes.min()),
               "max_size": int(spmap.sizes.max()), "labels": args.out}
    if args.out:
        write_pgm16(args.out, spmap.labels)
        sidecar = Path(args.out).with_suffix(".json")
        _write_json(sidecar, {"M": int(spmap.count), "sizes": spmap.sizes.tolist(),
                              "centroids": superpixel_centroids(spmap).tolist()})
        summary["sidecar"] = str(sidecar)
    print(json.dumps(summary))


def cmd_shapes(args) -> None:
    cfg = _load_config(args)
    _write_json(None, pyramid_shapes(cfg.model.msgcn(), args.size, args.size))


def cmd_gradcheck(args) -> None:
    names = list(CASES) if args.op == "all" else [args.op]
    if args.op != "all" and args.op not in CASES:
        raise CliError(f"unknown op {args.op!r}; choose from {', '.join(CASES)}")
    worst_all = 0.0
    for name in names:
        errs = [check_op(name, s, args.eps) for s in range(args.seeds)]
        worst_all = max(worst_all, max(errs))
        status = "ok" if max(errs) <= TOLERANCE else "FAIL"
        print(f"{name:24s} max_rel_err {max(errs):.3e}  {status}")
    if worst_all > TOLERANCE:
        raise CliError(f"max relative error {worst_all:.3e} exceeds {TOLERANCE:g}")


def cmd_graph(args) -> None:
    cfg = _load_config(args)
    if not Path(args.image).exists():
        raise CliError(f"image not found: {args.image}")
    pixels, _ = pad_to_multiple(read_image(args.image))
    stem = Stem(cfg.model.msgcn().dims[0], make_rng(cfg.seed))
    nodes = grid_to_nodes(stem(pixels))
    table = knn_graph(nodes.data, min(args.k, nodes.shape[0]))
    _, hg, wg = stem.out_shape(*pixels.shape[1:])
    _write_json(args.out, {"grid": [hg, wg], "k": int(table.shape[1]), "neighbors": table.tolist()})


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spgnn", description="Graph-based defect detector on numpy.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--size", type=int, default=224)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--min-defects", type=int, default=1)
    s.add_argument("--max-defects", type=int, default=2)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train on a dataset directory")
    s.add_argument("--config")
    s.add_argument("--data")
    s.add_argument("--out")
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--log-every", type=int, default=10)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("detect", help="run a checkpoint on an image or a dataset")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config")
    s.add_argument("--image")
    s.add_argument("--image-id", type=int, default=0)
    s.add_argument("--data", help="dataset directory; writes a flat detection list for eval")
    s.add_argument("--out", default="-")
    s.add_argument("--overlay")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("eval", help="score detections against ground truth")
    s.add_argument("--gt", required=True)
    s.add_argument("--dets", required=True)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("superpixel", help="segment an image and write 16-bit labels")
    s.add_argument("--image", required=True)
    s.add_argument("--m", type=int, default=DEFAULT_M_TARGET)
    s.add_argument("--compactness", type=float, default=DEFAULT_COMPACTNESS)
    s.add_argument("--iters", type=int, default=DEFAULT_ITERS)
    s.add_argument("--out")
    s.set_defaults(func=cmd_superpixel)

    s = sub.add_parser("shapes", help="print the pyramid shape table")
    s.add_argument("--config")
    s.add_argument("--size", type=int, default=896)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_shapes)

    s = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    s.add_argument("--op", default="all")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--eps", type=float, default=EPS)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("graph", help="dump the stem-feature k-NN table of an image")
    s.add_argument("--image", required=True)
    s.add_argument("--k", type=int, default=9)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_graph)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except KeyboardInterrupt:
        print(f"spgnn {args.command}: error: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # every failure becomes one diagnostic line
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"spgnn {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
