"""Detection metrics: IoU-gated greedy matching, PR curves, 101-point AP, mAP/mAR summaries.

Conventions follow the common detection benchmark: IoU thresholds
0.50:0.05:0.95, at most 100 detections per image and category, medium boxes
with area in [32^2, 96^2] and large boxes above 96^2.  Ground truth outside an
area range is ignored rather than removed, and so are detections matched to
it or lying outside the range unmatched.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import boxes as bx
from .boxes import iou, nms  # noqa: F401  (re-exported as part of the metric API)

IOU_THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
RECALL_POINTS = np.arange(101) / 100.0   # k/100 exactly; linspace is off by an ulp at some k
AREA_ALL = (0.0, 1e10)
AREA_MEDIUM = (32.0 ** 2, 96.0 ** 2)
AREA_LARGE = (96.0 ** 2, 1e10)
MAX_DETS = 100


@dataclass
class EvalReport:
    mAP: float = 0.0
    AP50: float = 0.0
    AP75: float = 0.0
    AP_M: float = 0.0
    AP_L: float = 0.0
    mAR: float = 0.0
    per_class: dict = field(default_factory=dict)   # category -> AP at each IoU threshold

    def to_dict(self) -> dict:
        return asdict(self)


def _outside(areas: np.ndarray, rng) -> np.ndarray:
    return (areas < rng[0]) | (areas > rng[1])


def match_detections(det_boxes: np.ndarray, gt_boxes: np.ndarray, iou_thresh: float,
                     gt_ignore: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Greedy matching for one image and class; detections must be sorted by score.

    Each detection takes the still-unmatched ground truth of highest IoU at or
    above the threshold, preferring non-ignored ground truth.  Returns the
    matched ground-truth index per detection (-1 if none) and whether that match
    is to an ignored box.
    """
    nd, ng = len(det_boxes), len(gt_boxes)
    matched = np.full(nd, -1, dtype=int)
    to_ignored = np.zeros(nd, dtype=bool)
    if nd == 0 or ng == 0:
        return matched, to_ignored
    ign = np.zeros(ng, dtype=bool) if gt_ignore is None else np.asarray(gt_ignore, dtype=bool)
    ious = bx.iou_matrix(det_boxes, gt_boxes)
    taken = np.zeros(ng, dtype=bool)
    for d in range(nd):
        for pool in (~ign, ign):
            cand = np.nonzero(pool & ~taken & (ious[d] >= iou_thresh))[0]
            if cand.size:
                g = cand[np.argmax(ious[d, cand])]
                matched[d] = g
                to_ignored[d] = ign[g]
                taken[g] = True
                break
    return matched, to_ignored


def _image_order(dets: list, gts: dict) -> list:
    order = list(gts)
    seen = set(order)
    for d in dets:
        if d[0] not in seen:
            seen.add(d[0])
            order.append(d[0])
    return order


def _class_flags(dets: list, gts: dict, iou_thresh: float, area_rng,
                 image_ids=None) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Scores, TP flags and FP flags over all images for one class, plus the positive count.

    Equal scores keep image order, then in-image input order.
    """
    scores, tps, fps = [], [], []
    npos = 0
    for image_id in (image_ids if image_ids is not None else _image_order(dets, gts)):
        g = gts.get(image_id, np.zeros((0, 4)))
        g_ign = _outside(bx.area(g), area_rng)
        npos += int((~g_ign).sum())
        mine = [d for d in dets if d[0] == image_id]
        mine.sort(key=lambda d: -d[2])   # stable
        mine = mine[:MAX_DETS]
        if not mine:
            continue
        boxes = np.array([d[1] for d in mine], dtype=np.float64).reshape(-1, 4)
        sc = np.array([d[2] for d in mine])
        matched, to_ign = match_detections(boxes, g, iou_thresh, g_ign)
        ignored = to_ign | ((matched < 0) & _outside(bx.area(boxes), area_rng))
        keep = ~ignored
        scores.append(sc[keep])
        tps.append((matched >= 0)[keep])
        fps.append((matched < 0)[keep])
    if not scores:
        return np.zeros(0), np.zeros(0, bool), np.zeros(0, bool), npos
    scores = np.concatenate(scores)
    order = np.argsort(-scores, kind="mergesort")
    return scores[order], np.concatenate(tps)[order], np.concatenate(fps)[order], npos


def pr_curve(dets: list, gts: dict, iou_thresh: float, area_rng=AREA_ALL) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall after each detection, in descending-score order.

    ``dets`` holds ``(image_id, box_xyxy, score)`` for one class and ``gts``
    maps image id to that class's ground-truth boxes.
    """
    _, tp, fp, npos = _class_flags(dets, gts, iou_thresh, area_rng)
    if tp.size == 0 or npos == 0:
        return np.zeros(0), np.zeros(0)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(fp)
    return ctp / (ctp + cfp), ctp / npos


def average_precision(precision, recall) -> float:
    """101-point interpolated AP over the precision envelope."""
    precision = np.asarray(precision, dtype=np.float64)
    recall = np.asarray(recall, dtype=np.float64)
    if precision.size == 0:
        return 0.0
    env = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    vals = np.where(idx < len(env), env[np.minimum(idx, len(env) - 1)], 0.0)
    return float(vals.mean())


def _group(dets_json: list, gt_json: dict):
    image_ids = {img["id"] for img in gt_json["images"]}
    gts: dict = {}
    for ann in gt_json["annotations"]:
        if ann["image_id"] not in image_ids:
            raise KeyError(f"annotation refers to unknown image id {ann['image_id']!r}")
        gts.setdefault(ann["category_id"], {}).setdefault(ann["image_id"], []).append(ann["bbox"])
    gts = {c: {i: bx.xywh_to_xyxy(np.array(b)) for i, b in per.items()} for c, per in gts.items()}
    dets: dict = {}
    for d in dets_json:
        if d["image_id"] not in image_ids:
            raise KeyError(f"detection refers to unknown image id {d['image_id']!r}")
        box = bx.xywh_to_xyxy(np.array(d["bbox"], dtype=np.float64))[0]
        dets.setdefault(d["category_id"], []).append((d["image_id"], box, float(d["score"])))
    return gts, dets


def evaluate(dets_json: list, gt_json: dict) -> EvalReport:
    """Summarise detections (results-format dicts) against a ground-truth document."""
    gts, dets = _group(dets_json, gt_json)
    image_ids = [img["id"] for img in gt_json["images"]]
    report = EvalReport()
    if not gts:
        return report
    classes = sorted(gts)
    ap = {}
    recall = {}
    for area_name, area_rng in (("all", AREA_ALL), ("medium", AREA_MEDIUM), ("large", AREA_LARGE)):
        for c in classes:
            for t in IOU_THRESHOLDS:
                _, tp, fp, npos = _class_flags(dets.get(c, []), gts[c], t, area_rng, image_ids)
                if npos == 0:
                    continue
                if tp.size:
                    ctp, cfp = np.cumsum(tp), np.cumsum(fp)
                    ap[area_name, c, t] = average_precision(ctp / (ctp + cfp), ctp / npos)
                    recall[area_name, c, t] = ctp[-1] / npos
                else:
                    ap[area_name, c, t] = 0.0
                    recall[area_name, c, t] = 0.0

    def mean(keys):
        vals = [ap[k] for k in keys if k in ap]
        return float(np.mean(vals)) if vals else 0.0

    report.mAP = mean([("all", c, t) for c in classes for t in IOU_THRESHOLDS])
    report.AP50 = mean([("all", c, IOU_THRESHOLDS[0]) for c in classes])
    report.AP75 = mean([("all", c, IOU_THRESHOLDS[5]) for c in classes])
    report.AP_M = mean([("medium", c, t) for c in classes for t in IOU_THRESHOLDS])
    report.AP_L = mean([("large", c, t) for c in classes for t in IOU_THRESHOLDS])
    rec = [recall["all", c, t] for c in classes for t in IOU_THRESHOLDS if ("all", c, t) in recall]
    report.mAR = float(np.mean(rec)) if rec else 0.0
    report.per_class = {int(c): [ap.get(("all", c, t), 0.0) for t in IOU_THRESHOLDS] for c in classes}
    return report
