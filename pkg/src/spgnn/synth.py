"""Synthetic blade images with five defect archetypes and exact box annotations.

Each image is a light, shaded blade polygon on a dark textured background.
Defects are rasterised as boolean masks first; the annotation box is the
tight bounding box of the final mask, so boxes are exact by construction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from skimage.draw import line as draw_line
from skimage.draw import polygon as draw_polygon

from .imageio import read_ppm, write_ppm
from .nn import make_rng

CLASSES = ("crack", "nick", "broken", "burned", "overheated")


@dataclass
class SyntheticSpec:
    seed: int = 0
    size: int = 224
    n: int = 8
    min_defects: int = 1
    max_defects: int = 2


@dataclass
class Sample:
    image_id: int
    pixels: np.ndarray          # 3 x H x W in [0, 1], quantised to 8 bits
    boxes: np.ndarray           # K x 4 corner form, pixel-edge coordinates
    classes: np.ndarray         # K, values in 1..5
    masks: list = field(default_factory=list, repr=False)
    file_name: str = ""


def mask_box(mask: np.ndarray) -> np.ndarray:
    """Tight corner-form box ``(x1, y1, x2, y2)`` around the true pixels of ``mask``."""
    ys, xs = np.nonzero(mask)
    return np.array([xs.min(), ys.min(), xs.max() + 1, ys.max() + 1], dtype=np.float64)


def _smooth_noise(rng, size: int, cells: int) -> np.ndarray:
    coarse = rng.uniform(-1, 1, (cells + 1, cells + 1))
    t = np.linspace(0, cells, size)
    i = np.minimum(t.astype(int), cells - 1)
    f = t - i
    rows = coarse[i] * (1 - f)[:, None] + coarse[i + 1] * f[:, None]
    return rows[:, i] * (1 - f)[None, :] + rows[:, i + 1] * f[None, :]


def _poly_mask(shape, xs, ys) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    rr, cc = draw_polygon(np.asarray(ys), np.asarray(xs), shape)
    m[rr, cc] = True
    return m


def _blob(rng, shape, cx, cy, rx, ry, jitter=0.25, points=14) -> np.ndarray:
    ang = np.linspace(0, 2 * np.pi, points, endpoint=False)
    rad = 1 + rng.uniform(-jitter, jitter, points)
    return _poly_mask(shape, cx + rx * rad * np.cos(ang), cy + ry * rad * np.sin(ang))


def _blade(rng, size):
    m = size * rng.uniform(0.12, 0.18)
    top = rng.uniform(-0.08, 0.08, 2) * size
    corners_x = np.array([m + top[0], size - m + top[1], size - m * 0.8, m * 0.8])
    corners_y = np.array([m * 0.8, m * 0.9, size - m * 0.8, size - m * 0.9])
    return corners_x, corners_y


def _render_defect(rng, cls: str, blade: np.ndarray, corners, size: int):
    shape = blade.shape
    cx_all, cy_all = corners
    if cls == "crack":
        x, y = rng.uniform(0.3, 0.7, 2) * size
        mask = np.zeros(shape, dtype=bool)
        ang = rng.uniform(0, 2 * np.pi)
        for _ in range(int(rng.integers(3, 6))):
            ang += rng.uniform(-0.9, 0.9)
            step = rng.uniform(10, 18)
            nx, ny = x + step * np.cos(ang), y + step * np.sin(ang)
            rr, cc = draw_line(int(y), int(x), int(ny), int(nx))
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    r2, c2 = np.clip(rr + dy, 0, size - 1), np.clip(cc + dx, 0, size - 1)
                    mask[r2, c2] = True
            x, y = nx, ny
        return mask & blade
    if cls == "nick":
        k = int(rng.integers(0, 4))
        a, b = k, (k + 1) % 4
        t = rng.uniform(0.3, 0.7)
        ex = cx_all[a] + t * (cx_all[b] - cx_all[a])
        ey = cy_all[a] + t * (cy_all[b] - cy_all[a])
        r = rng.uniform(14, 22)
        return _blob(rng, shape, ex, ey, r, r, jitter=0.15) & blade
    if cls == "broken":
        k = int(rng.integers(0, 4))
        px, py = cx_all[k], cy_all[k]
        nxt, prv = (k + 1) % 4, (k - 1) % 4
        la, lb = rng.uniform(0.18, 0.3, 2)
        ox, oy = px + 0.1 * (px - cx_all.mean()), py + 0.1 * (py - cy_all.mean())
        xs = [ox, px + la * (cx_all[nxt] - px), px + lb * (cx_all[prv] - px)]
        ys = [oy, py + la * (cy_all[nxt] - py), py + lb * (cy_all[prv] - py)]
        return _poly_mask(shape, xs, ys) & blade
    x, y = rng.uniform(0.32, 0.68, 2) * size
    rx, ry = rng.uniform(13, 26, 2)
    return _blob(rng, shape, x, y, rx, ry, jitter=0.3 if cls == "burned" else 0.12) & blade


def render_sample(rng: np.random.Generator, size: int = 224, n_defects: int = 1):
    """Return ``(pixels 3xHxW float, [(class_id, mask), ...])``."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    bg = 0.14 + 0.05 * _smooth_noise(rng, size, 8) + 0.02 * rng.standard_normal((size, size))
    img = np.repeat(bg[None], 3, axis=0) * np.array([1.0, 0.95, 0.9])[:, None, None]
    corners = _blade(rng, size)
    blade = _poly_mask((size, size), *corners)
    tone = rng.uniform(0.6, 0.74) + rng.uniform(-0.03, 0.03, 3)
    shade = 0.85 + 0.15 * (0.6 * xx + 0.4 * yy) + 0.04 * _smooth_noise(rng, size, 16)
    metal = tone[:, None, None] * shade[None] + 0.015 * rng.standard_normal((3, size, size))
    img = np.where(blade[None], metal, img)

    defects = []
    occupied = np.zeros((size, size), dtype=bool)
    attempts = 0
    while len(defects) < n_defects and attempts < 200:
        attempts += 1
        cls_id = int(rng.integers(1, len(CLASSES) + 1))
        mask = _render_defect(rng, CLASSES[cls_id - 1], blade, corners, size)
        if mask.sum() < 60:
            continue
        box = mask_box(mask).astype(int)
        region = np.zeros_like(occupied)
        region[max(0, box[1] - 4):box[3] + 4, max(0, box[0] - 4):box[2] + 4] = True
        if (region & occupied).any():
            continue
        occupied |= region
        defects.append((cls_id, mask))

    for cls_id, mask in defects:
        name = CLASSES[cls_id - 1]
        if name == "crack":
            img[:, mask] = 0.16 + 0.04 * rng.standard_normal(mask.sum())
        elif name in ("nick", "broken"):
            img[:, mask] = bg[mask] * 0.9
        elif name == "burned":
            burn = np.array([0.26, 0.16, 0.08])[:, None] * (0.8 + 0.3 * rng.uniform(size=mask.sum()))
            img[:, mask] = burn
        else:
            tint = np.array([0.42, 0.32, 0.72])[:, None]
            img[:, mask] = 0.35 * img[:, mask] + 0.65 * tint
    pixels = np.round(np.clip(img, 0, 1) * 255) / 255.0
    return pixels, defects


def synth_samples(spec: SyntheticSpec) -> list[Sample]:
    rng = make_rng(spec.seed)
    samples = []
    for i in range(spec.n):
        k = int(rng.integers(spec.min_defects, spec.max_defects + 1))
        pixels, defects = render_sample(rng, spec.size, k)
        boxes = np.array([mask_box(m) for _, m in defects]).reshape(-1, 4)
        classes = np.array([c for c, _ in defects], dtype=int)
        samples.append(Sample(i, pixels, boxes, classes, [m for _, m in defects], f"{i:06d}.ppm"))
    return samples


def ground_truth_json(samples: list[Sample]) -> dict:
    images, anns = [], []
    for s in samples:
        _, h, w = s.pixels.shape
        images.append({"id": s.image_id, "file_name": s.file_name, "width": w, "height": h})
        for b, c in zip(s.boxes, s.classes):
            x1, y1, x2, y2 = (float(v) for v in b)
            anns.append({"id": len(anns) + 1, "image_id": s.image_id, "category_id": int(c),
                         "bbox": [x1, y1, x2 - x1, y2 - y1], "area": (x2 - x1) * (y2 - y1)})
    cats = [{"id": i + 1, "name": n} for i, n in enumerate(CLASSES)]
    return {"images": images, "annotations": anns, "categories": cats}


def synth_generate(spec: SyntheticSpec, out_dir) -> Path:
    """Write ``images/*.ppm`` and ``gt.json`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    samples = synth_samples(spec)
    for s in samples:
        write_ppm(out / "images" / s.file_name, s.pixels)
    (out / "gt.json").write_text(json.dumps(ground_truth_json(samples), indent=1), encoding="utf-8")
    return out


def load_dataset(root) -> list[Sample]:
    root = Path(root)
    gt = json.loads((root / "gt.json").read_text(encoding="utf-8"))
    by_image: dict = {img["id"]: [] for img in gt["images"]}
    for ann in gt["annotations"]:
        by_image[ann["image_id"]].append(ann)
    samples = []
    for img in gt["images"]:
        anns = by_image[img["id"]]
        boxes = np.array([[a["bbox"][0], a["bbox"][1], a["bbox"][0] + a["bbox"][2], a["bbox"][1] + a["bbox"][3]]
                          for a in anns], dtype=np.float64).reshape(-1, 4)
        classes = np.array([a["category_id"] for a in anns], dtype=int)
        samples.append(Sample(img["id"], read_ppm(root / "images" / img["file_name"]), boxes, classes,
                              file_name=img["file_name"]))
    return samples
