"""Second stage: RoIAlign pooling, two parallel heads, target assignment and losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import boxes as bx
from . import core
from .core import Tensor
from .msgcn import LEVEL_STRIDES
from .nn import Linear, Module

HEAD_STDS = (0.1, 0.1, 0.2, 0.2)
RPN_BETA = 1.0 / 9.0
HEAD_BETA = 1.0


def map_roi_levels(boxes: np.ndarray, canonical: float = 224.0, canonical_level: int = 4,
                   min_level: int = 2, max_level: int = 5) -> np.ndarray:
    """Pyramid level id ``floor(4 + log2(sqrt(wh) / 224))`` clamped to [2, 5]."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scale = np.sqrt(bx.area(boxes))
    lvl = np.floor(canonical_level + np.log2(scale / canonical + 1e-12) + 1e-9)
    return np.clip(lvl, min_level, max_level).astype(int)


def _axis_weights(starts: np.ndarray, lengths: np.ndarray, size: int, out: int, sr: int) -> np.ndarray:
    """Dense ``R x out x size`` bilinear weights averaged over ``sr`` samples per bin."""
    r = len(starts)
    binw = lengths / out
    offs = (np.arange(out)[:, None] + (np.arange(sr)[None, :] + 0.5) / sr).ravel()  # out*sr
    pos = starts[:, None] + offs[None, :] * binw[:, None]
    valid = (pos >= -1.0) & (pos <= size)
    pos = np.clip(pos, 0.0, None)
    lo = np.floor(pos).astype(int)
    at_end = lo >= size - 1
    lo = np.where(at_end, size - 1, lo)
    hi = np.where(at_end, size - 1, lo + 1)
    frac = np.where(at_end, 0.0, pos - lo)
    w_lo = np.where(valid, 1.0 - frac, 0.0) / sr
    w_hi = np.where(valid, frac, 0.0) / sr
    mat = np.zeros((r, out, size))
    rr = np.repeat(np.arange(r), out * sr).reshape(r, out * sr)
    bins = np.broadcast_to(np.repeat(np.arange(out), sr)[None, :], (r, out * sr))
    np.add.at(mat, (rr, bins, lo), w_lo)
    np.add.at(mat, (rr, bins, hi), w_hi)
    return mat


def roi_align(levels: list[Tensor], rois: np.ndarray, strides=LEVEL_STRIDES, output_size: int = 7,
              sampling_ratio: int = 2) -> Tensor:
    """Bilinear RoIAlign of corner-form ``rois`` from the pyramid; returns ``R x C x S x S``.

    Each box is read from the level chosen by :func:`map_roi_levels`; every
    output bin averages ``sampling_ratio^2`` bilinear samples.  Sampling
    coordinates use the half-pixel-aligned convention.
    """
    rois = np.asarray(rois, dtype=np.float64).reshape(-1, 4)
    if ((rois[:, 2] <= rois[:, 0]) | (rois[:, 3] <= rois[:, 1])).any():
        raise ValueError("degenerate RoI")
    c = levels[0].shape[0]
    s = output_size
    lvl_idx = map_roi_levels(rois) - 2
    out = np.zeros((len(rois), c, s, s))
    plan = []
    for li, (feat, stride) in enumerate(zip(levels, strides)):
        sel = np.nonzero(lvl_idx == li)[0]
        if sel.size == 0:
            continue
        _, h, w = feat.shape
        b = rois[sel] / stride
        ry = _axis_weights(b[:, 1] - 0.5, b[:, 3] - b[:, 1], h, s, sampling_ratio)   # R x S x H
        rx = _axis_weights(b[:, 0] - 0.5, b[:, 2] - b[:, 0], w, s, sampling_ratio)   # R x S x W
        # t[r, h, c, q] = sum_w F[c, h, w] rx[r, q, w]
        t = (feat.data.reshape(c * h, w) @ rx.reshape(-1, w).T).reshape(c, h, len(sel), s)
        t = t.transpose(2, 1, 0, 3).reshape(len(sel), h, c * s)
        o = np.matmul(ry, t).reshape(len(sel), s, c, s).transpose(0, 2, 1, 3)
        out[sel] = o
        plan.append((li, sel, ry, rx, h, w))

    def bw(g):
        grads = [None] * len(levels)
        for li, sel, ry, rx, h, w in plan:
            gs = g[sel].transpose(0, 2, 1, 3).reshape(len(sel), s, c * s)     # r, p, (c q)
            gt = np.matmul(ry.transpose(0, 2, 1), gs)                        # r, h, (c q)
            gt = gt.reshape(len(sel), h, c, s).transpose(2, 1, 0, 3).reshape(c * h, len(sel) * s)
            gf = (gt @ rx.reshape(-1, w)).reshape(c, h, w)
            grads[li] = gf if grads[li] is None else grads[li] + gf
        return tuple(grads)

    return Tensor(out, tuple(levels), bw, "roi_align")


class DetectionHead(Module):
    """Flatten -> two GeLU FC layers -> parallel class logits and per-class deltas."""

    def __init__(self, in_dim: int, num_classes: int, rng: np.random.Generator, hidden: int = 1024):
        self.num_classes = num_classes
        self.fc1 = Linear(in_dim, hidden, rng)
        self.fc2 = Linear(hidden, hidden, rng)
        self.cls = Linear(hidden, num_classes + 1, rng)
        self.reg = Linear(hidden, 4 * num_classes, rng)

    def __call__(self, roi_feats: Tensor) -> tuple[Tensor, Tensor]:
        x = core.reshape(roi_feats, (roi_feats.shape[0], -1))
        x = core.gelu(self.fc2(core.gelu(self.fc1(x))))
        return self.cls(x), self.reg(x)


def head_forward(head: DetectionHead, roi_feats: Tensor) -> tuple[Tensor, Tensor]:
    return head(roi_feats)


@dataclass
class Assignment:
    labels: np.ndarray     # 1 positive, 0 negative, -1 ignore
    matched: np.ndarray    # matched ground-truth index or -1
    max_iou: np.ndarray
    deltas: np.ndarray     # encoded regression targets (zeros where not positive)


def assign_targets(boxes: np.ndarray, gt_boxes: np.ndarray, pos_iou: float, neg_iou: float,
                   stds=(1.0, 1.0, 1.0, 1.0), force_best: bool = True) -> Assignment:
    """Max-IoU assignment.

    IoU >= ``pos_iou`` is positive, IoU < ``neg_iou`` negative, the band in
    between ignored; each ground truth additionally claims its single best
    box (lowest index on ties) when that IoU is positive.
    """
    if not 0 < neg_iou <= pos_iou <= 1:
        raise ValueError("thresholds must satisfy 0 < neg_iou <= pos_iou <= 1")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    n = len(boxes)
    labels = np.full(n, -1, dtype=int)
    matched = np.full(n, -1, dtype=int)
    deltas = np.zeros((n, 4))
    if len(gt_boxes) == 0:
        labels[:] = 0
        return Assignment(labels, matched, np.zeros(n), deltas)
    ious = bx.iou_matrix(boxes, gt_boxes)
    best_gt = ious.argmax(axis=1)
    max_iou = ious[np.arange(n), best_gt]
    labels[max_iou < neg_iou] = 0
    pos = max_iou >= pos_iou
    labels[pos] = 1
    matched[pos] = best_gt[pos]
    if force_best and n:
        best_box = ious.argmax(axis=0)
        for g, i in enumerate(best_box):
            if ious[i, g] > 0:
                labels[i] = 1
                matched[i] = g
    p = labels == 1
    if p.any():
        deltas[p] = bx.encode(gt_boxes[matched[p]], boxes[p], stds)
    return Assignment(labels, matched, max_iou, deltas)


def sample_indices(labels: np.ndarray, num: int, pos_fraction: float,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random positives up to ``num * pos_fraction``; negatives fill the rest of ``num``."""
    pos = np.nonzero(labels == 1)[0]
    neg = np.nonzero(labels == 0)[0]
    max_pos = int(num * pos_fraction)
    if len(pos) > max_pos:
        pos = np.sort(rng.choice(pos, max_pos, replace=False))
    n_neg = min(len(neg), num - len(pos))
    if len(neg) > n_neg:
        neg = np.sort(rng.choice(neg, n_neg, replace=False))
    return pos, neg


@dataclass
class RpnTargets:
    pos: np.ndarray
    neg: np.ndarray
    deltas: np.ndarray      # len(pos) x 4


@dataclass
class HeadTargets:
    classes: np.ndarray     # per sampled RoI, 0 = background
    pos: np.ndarray         # indices (into the sampled RoIs) of foreground
    deltas: np.ndarray      # len(pos) x 4, normalised by HEAD_STDS


def detection_loss(rpn_logits: Tensor, rpn_deltas: Tensor, rpn_t: RpnTargets,
                   head_logits: Tensor, head_deltas: Tensor, head_t: HeadTargets) -> dict:
    """Binary CE + smooth-L1 for the RPN, softmax CE + smooth-L1 for the head.

    Regression terms are summed over positives and divided by the number of
    sampled boxes, so they are exactly zero when an image has no positives.
    """
    idx = np.concatenate([rpn_t.pos, rpn_t.neg])
    n_rpn = max(len(idx), 1)
    obj = np.concatenate([np.ones(len(rpn_t.pos)), np.zeros(len(rpn_t.neg))])
    rpn_cls = core.bce_with_logits(core.getitem(rpn_logits, idx), obj, normalizer=n_rpn)
    if len(rpn_t.pos):
        rpn_reg = core.smooth_l1(core.getitem(rpn_deltas, rpn_t.pos), rpn_t.deltas, RPN_BETA, normalizer=n_rpn)
    else:
        rpn_reg = Tensor(0.0)
    head_cls = core.softmax_cross_entropy(head_logits, head_t.classes)
    n_roi = max(len(head_t.classes), 1)
    if len(head_t.pos):
        m = head_deltas.shape[1] // 4
        per_class = core.reshape(head_deltas, (head_deltas.shape[0], m, 4))
        chosen = core.getitem(per_class, (head_t.pos, head_t.classes[head_t.pos] - 1))
        head_reg = core.smooth_l1(chosen, head_t.deltas, HEAD_BETA, normalizer=n_roi)
    else:
        head_reg = Tensor(0.0)
    total = core.add(core.add(rpn_cls, rpn_reg), core.add(head_cls, head_reg))
    if not np.isfinite(total.data):
        raise FloatingPointError(
            f"non-finite loss: rpn_cls={rpn_cls.item()} rpn_reg={rpn_reg.item()} "
            f"head_cls={head_cls.item()} head_reg={head_reg.item()}")
    return {"rpn_cls": rpn_cls, "rpn_reg": rpn_reg, "head_cls": head_cls, "head_reg": head_reg, "total": total}


@dataclass
class Detection:
    category: int           # 1..M
    box: np.ndarray         # corner form x1, y1, x2, y2
    score: float

    @property
    def center_form(self) -> tuple[float, float, float, float]:
        x1, y1, x2, y2 = self.box
        return (x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1

    def to_json(self, image_id) -> dict:
        x1, y1, x2, y2 = (float(v) for v in self.box)
        return {"image_id": image_id, "category_id": int(self.category),
                "bbox": [x1, y1, x2 - x1, y2 - y1], "score": float(self.score)}


def postprocess(head_logits: np.ndarray, head_deltas: np.ndarray, rois: np.ndarray, image_hw,
                score_thr: float = 0.05, nms_iou: float = 0.5, max_dets: int = 100) -> list[Detection]:
    """Argmax foreground class per RoI, decode its box, then per-image NMS and top-``max_dets``."""
    logits = np.asarray(head_logits, dtype=np.float64)
    if len(logits) == 0:
        return []
    z = logits - logits.max(axis=1, keepdims=True)
    prob = np.exp(z)
    prob /= prob.sum(axis=1, keepdims=True)
    cls = prob[:, 1:].argmax(axis=1) + 1
    score = prob[np.arange(len(prob)), cls]
    m = logits.shape[1] - 1
    d = np.asarray(head_deltas, dtype=np.float64).reshape(len(logits), m, 4)[np.arange(len(logits)), cls - 1]
    h, w = image_hw
    boxes = bx.clip(bx.decode(d, rois, HEAD_STDS), h, w)
    ok = (score > score_thr) & (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    boxes, score, cls = boxes[ok], score[ok], cls[ok]
    keep = bx.nms(boxes, score, nms_iou)[:max_dets]
    return [Detection(int(cls[i]), boxes[i], float(score[i])) for i in keep]
