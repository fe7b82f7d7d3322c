"""Slow, loop-based reference implementations used as test oracles.

Nothing here imports the package under test; every routine is a direct
transcription of its definition with plain Python loops.
"""
from __future__ import annotations

import math

import numpy as np


def knn(x: np.ndarray, k: int) -> list[list[int]]:
    n, d = x.shape
    out = []
    for i in range(n):
        dists = []
        for j in range(n):
            if j == i:
                continue
            s = 0.0
            for c in range(d):
                diff = float(x[i, c]) - float(x[j, c])
                s += diff * diff
            dists.append((s, j))
        dists.sort()
        out.append([i] + [j for _, j in dists[:k - 1]])
    return out


def max_relative(x: np.ndarray, nb) -> np.ndarray:
    n, d = x.shape
    out = np.zeros((n, d))
    for i in range(n):
        for c in range(d):
            out[i, c] = max(x[i, c] - x[j, c] for j in nb[i])
    return out


def box_iou(a, b) -> float:
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def nms(boxes, scores, thresh) -> list[int]:
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    keep = []
    for i in order:
        if all(box_iou(boxes[i], boxes[j]) <= thresh for j in keep):
            keep.append(i)
    return keep


def assign(boxes, gts, pos_iou, neg_iou):
    """Labels (1/0/-1) and matched index per box; every GT then claims its first best box."""
    labels, matched = [], []
    for b in boxes:
        ious = [box_iou(b, g) for g in gts]
        best = max(range(len(gts)), key=lambda g: (ious[g], -g))
        m = ious[best]
        if m >= pos_iou:
            labels.append(1)
            matched.append(best)
        elif m < neg_iou:
            labels.append(0)
            matched.append(-1)
        else:
            labels.append(-1)
            matched.append(-1)
    for g, gt in enumerate(gts):
        ious = [box_iou(b, gt) for b in boxes]
        best = max(range(len(boxes)), key=lambda i: (ious[i], -i))
        if ious[best] > 0:
            labels[best] = 1
            matched[best] = g
    return labels, matched


def bilinear(feat: np.ndarray, y: float, x: float) -> np.ndarray:
    """Half-pixel bilinear sample with the usual out-of-range rules."""
    c, h, w = feat.shape
    if y < -1.0 or y > h or x < -1.0 or x > w:
        return np.zeros(c)
    y, x = max(y, 0.0), max(x, 0.0)
    y0, x0 = int(math.floor(y)), int(math.floor(x))
    if y0 >= h - 1:
        y0 = y1 = h - 1
        fy = 0.0
    else:
        y1, fy = y0 + 1, y - y0
    if x0 >= w - 1:
        x0 = x1 = w - 1
        fx = 0.0
    else:
        x1, fx = x0 + 1, x - x0
    return ((1 - fy) * (1 - fx) * feat[:, y0, x0] + (1 - fy) * fx * feat[:, y0, x1]
            + fy * (1 - fx) * feat[:, y1, x0] + fy * fx * feat[:, y1, x1])


def roi_align_one(feat: np.ndarray, roi, stride: float, out: int, sr: int) -> np.ndarray:
    x1, y1, x2, y2 = (v / stride for v in roi)
    bw, bh = (x2 - x1) / out, (y2 - y1) / out
    res = np.zeros((feat.shape[0], out, out))
    for py in range(out):
        for px in range(out):
            acc = np.zeros(feat.shape[0])
            for iy in range(sr):
                for ix in range(sr):
                    y = y1 - 0.5 + (py + (iy + 0.5) / sr) * bh
                    x = x1 - 0.5 + (px + (ix + 0.5) / sr) * bw
                    acc += bilinear(feat, y, x)
            res[:, py, px] = acc / (sr * sr)
    return res


def superpixel_features(img: np.ndarray, labels: np.ndarray, m: int) -> np.ndarray:
    sums = np.zeros((m, img.shape[0]))
    counts = np.zeros(m)
    h, w = labels.shape
    for y in range(h):
        for x in range(w):
            lbl = labels[y, x]
            counts[lbl] += 1
            for c in range(img.shape[0]):
                sums[lbl, c] += img[c, y, x]
    return sums / counts[:, None]


def adjacency(centroids, sigma2: float) -> np.ndarray:
    m = len(centroids)
    a = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            dx = centroids[i][0] - centroids[j][0]
            dy = centroids[i][1] - centroids[j][1]
            a[i, j] = math.exp(-(dx * dx + dy * dy) / sigma2)
    return a


def is_four_connected(mask: np.ndarray) -> bool:
    pts = list(zip(*np.nonzero(mask)))
    if not pts:
        return False
    seen = {pts[0]}
    stack = [pts[0]]
    while stack:
        y, x = stack.pop()
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            q = (y + dy, x + dx)
            if 0 <= q[0] < mask.shape[0] and 0 <= q[1] < mask.shape[1] and mask[q] and q not in seen:
                seen.add(q)
                stack.append(q)
    return len(seen) == len(pts)


# --- detection metrics -------------------------------------------------------------------------

IOU_GRID = [0.5 + 0.05 * i for i in range(10)]
AREAS = {"all": (0.0, 1e10), "medium": (32.0 ** 2, 96.0 ** 2), "large": (96.0 ** 2, 1e10)}


def _xyxy(b):
    return (b[0], b[1], b[0] + b[2], b[1] + b[3])


def _ap101(tp_flags, fp_flags, npos) -> tuple[float, float]:
    tp = fp = 0
    prec, rec = [], []
    for t, f in zip(tp_flags, fp_flags):
        tp += t
        fp += f
        prec.append(tp / (tp + fp))
        rec.append(tp / npos)
    total = 0.0
    for k in range(101):
        r = k / 100.0
        best = 0.0
        for p, rc in zip(prec, rec):
            if rc >= r:
                best = max(best, p)
        total += best
    return total / 101.0, (rec[-1] if rec else 0.0)


def reference_evaluate(dets: list, gt: dict) -> dict:
    """Benchmark-style evaluation written from the definition, loop by loop."""
    img_ids = [im["id"] for im in gt["images"]]
    classes = sorted({a["category_id"] for a in gt["annotations"]})
    results = {}
    for area_name, (lo, hi) in AREAS.items():
        for c in classes:
            for t in IOU_GRID:
                t = round(t, 2)
                entries = []   # (score, image position, rank, tp, fp)
                npos = 0
                for pos, img in enumerate(img_ids):
                    g = [_xyxy(a["bbox"]) for a in gt["annotations"]
                         if a["image_id"] == img and a["category_id"] == c]
                    g_ign = [not (lo <= (b[2] - b[0]) * (b[3] - b[1]) <= hi) for b in g]
                    npos += sum(1 for x in g_ign if not x)
                    ds = [d for d in dets if d["image_id"] == img and d["category_id"] == c]
                    ds = sorted(enumerate(ds), key=lambda e: (-e[1]["score"], e[0]))[:100]
                    used = [False] * len(g)
                    for rank, (_, d) in enumerate(ds):
                        box = _xyxy(d["bbox"])
                        choice = -1
                        for want_ignored in (False, True):
                            best_iou = -1.0
                            for gi, gb in enumerate(g):
                                if used[gi] or g_ign[gi] != want_ignored:
                                    continue
                                v = box_iou(box, gb)
                                if v >= t and v > best_iou:
                                    best_iou, choice = v, gi
                            if choice >= 0:
                                break
                        if choice >= 0:
                            used[choice] = True
                            if g_ign[choice]:
                                continue
                            entries.append((d["score"], pos, rank, 1, 0))
                        else:
                            a = (box[2] - box[0]) * (box[3] - box[1])
                            if not (lo <= a <= hi):
                                continue
                            entries.append((d["score"], pos, rank, 0, 1))
                if npos == 0:
                    continue
                entries.sort(key=lambda e: (-e[0], e[1], e[2]))
                ap, rc = _ap101([e[3] for e in entries], [e[4] for e in entries], npos)
                results[area_name, c, t] = (ap, rc)

    def mean_ap(area, ts):
        vals = [results[area, c, round(t, 2)][0] for c in classes for t in ts if (area, c, round(t, 2)) in results]
        return sum(vals) / len(vals) if vals else 0.0

    recs = [results["all", c, round(t, 2)][1] for c in classes for t in IOU_GRID if ("all", c, round(t, 2)) in results]
    return {
        "mAP": mean_ap("all", IOU_GRID), "AP50": mean_ap("all", [0.5]), "AP75": mean_ap("all", [0.75]),
        "AP_M": mean_ap("medium", IOU_GRID), "AP_L": mean_ap("large", IOU_GRID),
        "mAR": sum(recs) / len(recs) if recs else 0.0,
    }


def random_micro_dataset(rng: np.random.Generator, n_images: int = 3, n_classes: int = 2,
                         max_boxes: int = 20) -> tuple[list, dict]:
    """Ground truth of mixed sizes plus jittered, duplicated and spurious detections."""
    images = [{"id": i, "width": 256, "height": 256} for i in range(n_images)]
    anns, dets = [], []
    budget = max_boxes
    for img in range(n_images):
        for _ in range(int(rng.integers(0, 4))):
            if budget <= 0:
                break
            budget -= 1
            size = float(rng.choice([20.0, 50.0, 110.0])) * rng.uniform(0.8, 1.2)
            x, y = rng.uniform(0, 256 - size, 2)
            w, h = size * rng.uniform(0.7, 1.3), size * rng.uniform(0.7, 1.3)
            c = int(rng.integers(1, n_classes + 1))
            anns.append({"id": len(anns) + 1, "image_id": img, "category_id": c, "bbox": [x, y, w, h],
                         "area": w * h})
            for _ in range(int(rng.integers(0, 3))):
                j = rng.normal(0, size * 0.12, 4)
                dets.append({"image_id": img, "category_id": c if rng.random() < 0.85 else
                             int(rng.integers(1, n_classes + 1)),
                             "bbox": [x + j[0], y + j[1], max(2.0, w + j[2]), max(2.0, h + j[3])],
                             "score": float(rng.choice([0.3, 0.5, 0.9])) if rng.random() < 0.3
                             else float(rng.uniform())})
        for _ in range(int(rng.integers(0, 3))):
            s = rng.uniform(10, 120)
            x, y = rng.uniform(0, 256 - s, 2)
            dets.append({"image_id": img, "category_id": int(rng.integers(1, n_classes + 1)),
                         "bbox": [x, y, s, s * rng.uniform(0.6, 1.4)], "score": float(rng.uniform())})
    gt = {"images": images, "annotations": anns,
          "categories": [{"id": c, "name": f"c{c}"} for c in range(1, n_classes + 1)]}
    return dets, gt


def random_image(rng, h, w):
    """Smooth colour regions plus noise: something SLIC has to work on."""
    img = np.empty((3, h, w))
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    for c in range(3):
        fx, fy, ph = rng.uniform(1, 6, 3)
        img[c] = 0.5 + 0.4 * np.sin(fx * 6 * xx + ph) * np.cos(fy * 6 * yy)
    for _ in range(int(rng.integers(0, 4))):
        y0, x0 = rng.integers(0, h - 4), rng.integers(0, w - 4)
        img[:, y0:y0 + int(rng.integers(4, max(5, h // 2))), x0:x0 + int(rng.integers(4, max(5, w // 2)))] = rng.uniform(0, 1, (3, 1, 1))
    return np.clip(img + rng.normal(0, rng.uniform(0, 0.1), img.shape), 0, 1)
