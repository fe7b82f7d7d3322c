"""The assembled two-stage detector: backbone, neck, superpixel branch, RPN and head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import core
from .config import RunConfig
from .core import Tensor
from .detect_head import (HEAD_STDS, DetectionHead, HeadTargets, RpnTargets, assign_targets,
                          detection_loss, postprocess, roi_align, sample_indices)
from .msgcn import ImageFpn, Msgcn
from .nn import Module, make_rng
from .patch_graph import check_image_size
from .sprpn import (Fusion, RpnHead, SpGcn, SuperpixelFpn, decode_and_select, flatten_rpn_outputs,
                    generate_anchors, unpool)
from .superpixel import SuperpixelGraph, SuperpixelMap, build_superpixel_graph, slic_segment


@dataclass
class PreparedImage:
    pixels: np.ndarray                  # 3 x H x W in [0, 1]
    spmap: SuperpixelMap | None = None
    graph: SuperpixelGraph | None = None

    @property
    def hw(self) -> tuple[int, int]:
        return self.pixels.shape[1], self.pixels.shape[2]


class Spgnn(Module):
    def __init__(self, cfg: RunConfig):
        cfg.validate()
        self.cfg = cfg
        rng = make_rng(cfg.seed)
        mc = cfg.model.msgcn()
        dim = mc.fpn_dim
        self.backbone = Msgcn(mc, rng)
        self.neck = ImageFpn(mc.dims, dim, rng)
        self.use_superpixels = cfg.superpixel.enabled
        if self.use_superpixels:
            self.spgcn = SpGcn(dim, rng, hidden=cfg.model.spgcn_hidden)
            self.sp_fpn = SuperpixelFpn(dim, rng)
            self.fusion = Fusion(dim, cfg.fusion.mode, rng)
        self.rpn = RpnHead(dim, rng)
        self.head = DetectionHead(dim * 7 * 7, cfg.model.num_classes, rng, hidden=cfg.model.head_width)
        self._anchor_cache: dict = {}

    def prepare(self, pixels: np.ndarray) -> PreparedImage:
        pixels = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
        check_image_size(pixels.shape[1], pixels.shape[2])
        if not self.use_superpixels:
            return PreparedImage(pixels)
        sp = self.cfg.superpixel
        spmap = slic_segment(pixels, sp.m_target, sp.compactness, sp.iters)
        return PreparedImage(pixels, spmap, build_superpixel_graph(pixels, spmap))

    def pyramid(self, prep: PreparedImage) -> list[Tensor]:
        f_levels = self.neck(self.backbone(prep.pixels))
        if not self.use_superpixels:
            return f_levels
        recovered = unpool(self.spgcn(prep.graph), prep.spmap)
        return self.fusion(f_levels, self.sp_fpn(recovered))

    def anchors(self, levels: list[Tensor]) -> np.ndarray:
        key = tuple(p.shape[1:] for p in levels)
        if key not in self._anchor_cache:
            self._anchor_cache[key] = generate_anchors(list(key)).boxes
        return self._anchor_cache[key]

    def loss(self, prep: PreparedImage, gt_boxes: np.ndarray, gt_classes: np.ndarray,
             rng: np.random.Generator) -> dict:
        cfg = self.cfg
        gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
        gt_classes = np.asarray(gt_classes, dtype=int)
        levels = self.pyramid(prep)
        logits, deltas = flatten_rpn_outputs(self.rpn(levels))
        anchors = self.anchors(levels)

        a = assign_targets(anchors, gt_boxes, cfg.rpn.pos_iou, cfg.rpn.neg_iou)
        pos, neg = sample_indices(a.labels, cfg.rpn.num_samples, cfg.rpn.pos_fraction, rng)
        rpn_t = RpnTargets(pos, neg, a.deltas[pos])

        props = decode_and_select(logits.data, deltas.data, anchors, prep.hw, cfg.rpn.pre_nms_top,
                                  cfg.rpn.nms_iou, cfg.rpn.post_nms_top, cfg.rpn.min_size)
        rois = np.concatenate([props.boxes, gt_boxes], axis=0)
        h = assign_targets(rois, gt_boxes, cfg.head.pos_iou, cfg.head.neg_iou, stds=HEAD_STDS)
        hpos, hneg = sample_indices(h.labels, cfg.head.num_samples, cfg.head.pos_fraction, rng)
        sel = np.concatenate([hpos, hneg])
        classes = np.zeros(len(sel), dtype=int)
        classes[:len(hpos)] = gt_classes[h.matched[hpos]]
        head_t = HeadTargets(classes, np.arange(len(hpos)), h.deltas[hpos])

        cls_logits, box_deltas = self.head(roi_align(levels, rois[sel]))
        return detection_loss(logits, deltas, rpn_t, cls_logits, box_deltas, head_t)

    def detect(self, prep: PreparedImage) -> list:
        cfg = self.cfg
        with core.no_grad():
            levels = self.pyramid(prep)
            logits, deltas = flatten_rpn_outputs(self.rpn(levels))
            props = decode_and_select(logits.data, deltas.data, self.anchors(levels), prep.hw,
                                      cfg.rpn.pre_nms_top, cfg.rpn.nms_iou, cfg.rpn.post_nms_top,
                                      cfg.rpn.min_size)
            if len(props.boxes) == 0:
                return []
            cls_logits, box_deltas = self.head(roi_align(levels, props.boxes))
        return postprocess(cls_logits.data, box_deltas.data, props.boxes, prep.hw,
                           cfg.head.score_thr, cfg.head.nms_iou, cfg.head.max_dets)
