"""Superpixel-perception region proposals.

A two-layer GCN embeds the superpixel graph, the embedding is unpooled back
onto the pixel grid, strided convolutions turn it into a pyramid aligned with
the image FPN, the two pyramids are fused, and an anchor-based RPN head
scores and regresses proposals on the fused levels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import boxes as bx
from . import core
from .core import Parameter, Tensor
from .msgcn import LEVEL_STRIDES
from .nn import Conv2d, Module, kaiming_uniform
from .superpixel import SuperpixelGraph, SuperpixelMap

ANCHOR_SIZES = (32, 64, 128, 256)
ANCHOR_RATIOS = (0.5, 1.0, 2.0)
FUSION_MODES = ("add", "concat")


class SpGcn(Module):
    """``H1 = gelu(A F W1)``, ``H2 = A H1 W2`` over the normalised superpixel adjacency."""

    def __init__(self, out_dim: int, rng: np.random.Generator, hidden: int = 64, in_dim: int = 3):
        self.w1 = Parameter(kaiming_uniform(rng, (in_dim, hidden), in_dim), "w1")
        self.w2 = Parameter(kaiming_uniform(rng, (hidden, out_dim), hidden), "w2")

    def __call__(self, graph: SuperpixelGraph) -> Tensor:
        a_hat = Tensor(graph.normalized)
        h1 = core.gelu(core.matmul(core.matmul(a_hat, Tensor(graph.features)), self.w1))
        return core.matmul(core.matmul(a_hat, h1), self.w2)


def spgcn_forward(model: SpGcn, graph: SuperpixelGraph) -> Tensor:
    return model(graph)


def unpool(node_feats: Tensor, spmap: SuperpixelMap) -> Tensor:
    """Broadcast each superpixel's feature row to its pixels: ``M x C -> C x H x W``."""
    m, c = node_feats.shape
    if m != spmap.count:
        raise ValueError(f"{m} feature rows for {spmap.count} superpixels")
    h, w = spmap.labels.shape
    per_pixel = core.gather_rows(node_feats, spmap.labels.ravel())
    return core.reshape(core.transpose(per_pixel, (1, 0)), (c, h, w))


class SuperpixelFpn(Module):
    """Independent 3x3 convolutions with strides 4, 8, 16, 32 on the recovered map."""

    def __init__(self, dim: int, rng: np.random.Generator, strides=LEVEL_STRIDES):
        self.convs = [Conv2d(dim, dim, 3, rng, stride=s, pad=0) for s in strides]

    def __call__(self, recovered: Tensor) -> list[Tensor]:
        _, h, w = recovered.shape
        if h % 32 or w % 32:
            raise ValueError(f"recovered map {h}x{w} not divisible by 32")
        padded = core.pad2d(recovered, 1)
        return [conv(padded) for conv in self.convs]


def build_superpixel_fpn(fpn: SuperpixelFpn, recovered: Tensor) -> list[Tensor]:
    return fpn(recovered)


class Fusion(Module):
    """Per-level fusion of image and superpixel pyramids, then a 3x3 anti-aliasing conv."""

    def __init__(self, dim: int, mode: str, rng: np.random.Generator, levels: int = 4):
        if mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {mode!r}; expected one of {FUSION_MODES}")
        self.mode = mode
        c_in = 2 * dim if mode == "concat" else dim
        self.convs = [Conv2d(c_in, dim, 3, rng) for _ in range(levels)]

    def __call__(self, f_levels: list[Tensor], s_levels: list[Tensor]) -> list[Tensor]:
        out = []
        for conv, f, s in zip(self.convs, f_levels, s_levels):
            if f.shape != s.shape:
                raise ValueError(f"pyramid level shapes differ: {f.shape} vs {s.shape}")
            merged = core.add(f, s) if self.mode == "add" else core.concat([f, s], axis=0)
            out.append(conv(merged))
        return out


def fuse(fusion: Fusion, f_levels: list[Tensor], s_levels: list[Tensor]) -> list[Tensor]:
    return fusion(f_levels, s_levels)


@dataclass
class Anchors:
    boxes: np.ndarray        # A x 4 corner form
    level: np.ndarray        # level index (0..3) per anchor
    counts: list             # anchors per level


def generate_anchors(level_shapes, strides=LEVEL_STRIDES, base_sizes=ANCHOR_SIZES,
                     ratios=ANCHOR_RATIOS) -> Anchors:
    """One anchor per (cell, ratio); cell centres at ``(i + 0.5) * stride``; ratio is h/w."""
    ratios = np.asarray(ratios, dtype=np.float64)
    all_boxes, all_levels, counts = [], [], []
    for lvl, ((h, w), stride, base) in enumerate(zip(level_shapes, strides, base_sizes)):
        ws = base / np.sqrt(ratios)
        hs = base * np.sqrt(ratios)
        cy, cx = np.meshgrid((np.arange(h) + 0.5) * stride, (np.arange(w) + 0.5) * stride, indexing="ij")
        cx = cx.reshape(-1, 1)
        cy = cy.reshape(-1, 1)
        b = np.stack([cx - ws / 2, cy - hs / 2, cx + ws / 2, cy + hs / 2], axis=-1).reshape(-1, 4)
        all_boxes.append(b)
        all_levels.append(np.full(len(b), lvl))
        counts.append(len(b))
    return Anchors(np.concatenate(all_boxes), np.concatenate(all_levels), counts)


class RpnHead(Module):
    def __init__(self, dim: int, rng: np.random.Generator, num_anchors: int = len(ANCHOR_RATIOS)):
        self.num_anchors = num_anchors
        self.conv = Conv2d(dim, dim, 3, rng)
        self.cls = Conv2d(dim, num_anchors, 1, rng, pad=0)
        self.reg = Conv2d(dim, 4 * num_anchors, 1, rng, pad=0)

    def __call__(self, levels: list[Tensor]) -> list[tuple[Tensor, Tensor]]:
        outs = []
        for p in levels:
            t = core.gelu(self.conv(p))
            outs.append((self.cls(t), self.reg(t)))
        return outs


def rpn_forward(head: RpnHead, levels: list[Tensor]) -> list[tuple[Tensor, Tensor]]:
    return head(levels)


def flatten_rpn_outputs(outs: list[tuple[Tensor, Tensor]]) -> tuple[Tensor, Tensor]:
    """Concatenate per-level maps into anchor order: ``(A,)`` logits and ``(A, 4)`` deltas."""
    logits, deltas = [], []
    for cls, reg in outs:
        a, h, w = cls.shape
        logits.append(core.reshape(core.transpose(cls, (1, 2, 0)), (h * w * a,)))
        r = core.reshape(reg, (a, 4, h, w))
        deltas.append(core.reshape(core.transpose(r, (2, 3, 0, 1)), (h * w * a, 4)))
    return core.concat(logits, axis=0), core.concat(deltas, axis=0)


@dataclass
class Proposals:
    boxes: np.ndarray    # P x 4, clipped to the image
    scores: np.ndarray   # objectness in [0, 1]


def decode_and_select(logits, deltas, anchors: np.ndarray, image_hw, pre_nms_top: int = 1000,
                      nms_iou: float = 0.7, post_nms_top: int = 300, min_size: float = 2.0) -> Proposals:
    logits = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64).ravel()
    deltas = np.asarray(deltas.data if isinstance(deltas, Tensor) else deltas, dtype=np.float64).reshape(-1, 4)
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    if not (len(logits) == len(deltas) == len(anchors)):
        raise ValueError("logits, deltas and anchors differ in count")
    order = np.argsort(-logits, kind="stable")[:pre_nms_top]
    scores = 1.0 / (1.0 + np.exp(-logits[order]))
    h, w = image_hw
    boxes = bx.clip(bx.decode(deltas[order], anchors[order]), h, w)
    ok = ((boxes[:, 2] - boxes[:, 0]) >= min_size) & ((boxes[:, 3] - boxes[:, 1]) >= min_size)
    boxes, scores = boxes[ok], scores[ok]
    keep = bx.nms(boxes, scores, nms_iou)[:post_nms_top]
    return Proposals(boxes[keep], scores[keep])
