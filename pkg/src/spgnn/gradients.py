"""Finite-difference checks for every differentiable operation, one small case per op and seed.

Each case projects the op's output onto a fixed random tensor to get a scalar
and compares backward against central differences over all inputs and
weights.  Inputs to piecewise-linear pieces (the max-relative aggregation and
the smooth-L1 knee) are drawn away from their kinks so that central
differences are meaningful.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import core
from .core import Parameter, Tensor
from .detect_head import (HEAD_STDS, DetectionHead, HeadTargets, RpnTargets, detection_loss,
                          roi_align)
from .graph_conv import GcnBlock, GraphConvLayer
from .msgcn import ImageFpn
from .nn import Conv2d, make_rng
from .optim import grad_check
from .patch_graph import Stem, knn_graph
from .sprpn import Fusion, RpnHead, SpGcn, flatten_rpn_outputs, unpool
from .superpixel import SuperpixelMap, build_superpixel_graph

EPS = 1e-3
TOLERANCE = 1e-4


def _project(out: Tensor, r: np.ndarray) -> Tensor:
    return core.tsum(core.mul(out, Tensor(r)))


def _param(rng, *shape, scale=1.0) -> Parameter:
    return Parameter(scale * rng.standard_normal(shape))


def _separated_nodes(rng, n: int, d: int, gap: float = 0.3) -> np.ndarray:
    """Features whose per-column values are pairwise at least ``gap`` apart."""
    cols = [rng.permutation(n) for _ in range(d)]
    return (np.stack(cols, axis=1) - n / 2) * gap


def _min_gap(values: np.ndarray, nb: np.ndarray) -> float:
    g = np.sort(values[nb], axis=1)
    return float((g[:, 1] - g[:, 0]).min()) if nb.shape[1] > 1 else np.inf


def case_matmul(rng):
    a, b = _param(rng, 4, 3), _param(rng, 3, 5)
    r = rng.standard_normal((4, 5))
    return lambda: _project(core.matmul(a, b), r), [a, b]


def case_conv2d(rng):
    x, w, b = _param(rng, 2, 7, 6), _param(rng, 3, 2, 3, 3, scale=0.5), _param(rng, 3)
    r1 = rng.standard_normal((3, 7, 6))
    r2 = rng.standard_normal((3, 3, 2))
    return (lambda: core.add(_project(core.conv2d(x, w, b, 1, 1), r1),
                             _project(core.conv2d(x, w, None, 2, 0), r2))), [x, w, b]


def case_gelu(rng):
    x = _param(rng, 5, 4, scale=2.0)
    r = rng.standard_normal((5, 4))
    return lambda: _project(core.gelu(x), r), [x]


def case_graph_conv(rng):
    n, d, heads = 10, 4, 2
    x = Parameter(_separated_nodes(rng, n, d))
    nb = knn_graph(x.data, 3)
    layer = GraphConvLayer(d, 6, heads, rng)
    r = rng.standard_normal((n, 6))
    return lambda: _project(layer(x, nb), r), [x] + layer.parameters()


def case_gcn_block(rng):
    n, d = 9, 4
    while True:
        block = GcnBlock(d, 2, 3, rng, ffn_ratio=2)
        for p in block.parameters():
            p.data[...] = rng.uniform(-0.5, 0.5, p.shape)
        x = Parameter(rng.standard_normal((n, d)))
        nb = knn_graph(x.data, 3)
        pre = block.fc_in(x).data
        if min(_min_gap(pre[:, j], nb) for j in range(d)) > 0.05:
            break
    r = rng.standard_normal((n, d))
    return lambda: _project(block(x, nb), r), [x] + block.parameters()


def _toy_superpixels(rng, h=8, w=8):
    labels = np.zeros((h, w), dtype=int)
    labels[:, w // 2:] = 1
    labels[h // 2:, :w // 2] = 2
    labels[h // 2:, w // 2:] = 3 if rng.random() < 0.5 else 1
    spmap = SuperpixelMap.from_labels(labels)
    img = rng.uniform(0, 1, (3, h, w))
    return spmap, build_superpixel_graph(img, spmap)


def case_spgcn(rng):
    _, graph = _toy_superpixels(rng)
    model = SpGcn(5, rng, hidden=6)
    r = rng.standard_normal((graph.features.shape[0], 5))
    return lambda: _project(model(graph), r), model.parameters()


def case_unpool(rng):
    spmap, _ = _toy_superpixels(rng)
    feats = _param(rng, spmap.count, 3)
    r = rng.standard_normal((3,) + spmap.labels.shape)
    return lambda: _project(unpool(feats, spmap), r), [feats]


def case_roi_align(rng):
    levels = [_param(rng, 2, 64 // s, 64 // s) for s in (4, 8, 16, 32)]
    rois = np.array([[3.0, 5.0, 40.0, 30.0], [10.5, 2.0, 60.0, 63.0], [0.0, 0.0, 12.0, 9.0],
                     [20.0, 20.0, 28.0, 33.0]])
    rois[:, :2] += rng.uniform(0, 2, (4, 2))
    r = rng.standard_normal((len(rois), 2, 3, 3))
    return lambda: _project(roi_align(levels, rois, output_size=3), r), levels


def case_rpn_head(rng):
    head = RpnHead(3, rng)
    levels = [_param(rng, 3, 4, 4), _param(rng, 3, 2, 2)]
    outs_shape = flatten_rpn_outputs(head(levels))
    r1 = rng.standard_normal(outs_shape[0].shape)
    r2 = rng.standard_normal(outs_shape[1].shape)

    def fn():
        lo, de = flatten_rpn_outputs(head(levels))
        return core.add(_project(lo, r1), _project(de, r2))
    return fn, levels + head.parameters()


def case_detection_head(rng):
    head = DetectionHead(2 * 3 * 3, 3, rng, hidden=8)
    x = _param(rng, 4, 2, 3, 3)
    r1, r2 = rng.standard_normal((4, 4)), rng.standard_normal((4, 12))

    def fn():
        cl, de = head(x)
        return core.add(_project(cl, r1), _project(de, r2))
    return fn, [x] + head.parameters()


def case_softmax_ce(rng):
    x = _param(rng, 6, 4)
    t = rng.integers(0, 4, 6)
    return lambda: core.softmax_cross_entropy(x, t), [x]


def case_bce(rng):
    x = _param(rng, 7, scale=2.0)
    t = (rng.random(7) < 0.5).astype(float)
    return lambda: core.bce_with_logits(x, t, normalizer=5.0), [x]


def case_smooth_l1(rng):
    beta = 1.0 / 9.0
    t = rng.standard_normal((5, 4))
    d = rng.uniform(0.01, 0.5, (5, 4)) * rng.choice([-1.0, 1.0], (5, 4))
    d = np.where(np.abs(np.abs(d) - beta) < 0.02, d + 0.05 * np.sign(d), d)
    x = Parameter(t + d)
    return lambda: core.smooth_l1(x, t, beta, normalizer=3.0), [x]


def case_detection_loss(rng):
    n_anchor, n_roi, m = 12, 6, 3
    lo, de = _param(rng, n_anchor), _param(rng, n_anchor, 4, scale=0.05)
    cl, bd = _param(rng, n_roi, m + 1), _param(rng, n_roi, 4 * m, scale=0.05)
    rpn_t = RpnTargets(np.array([1, 4]), np.array([0, 2, 7, 9]), rng.uniform(0.3, 0.6, (2, 4)))
    classes = np.array([2, 1, 3, 0, 0, 0])
    head_t = HeadTargets(classes, np.arange(3), rng.uniform(1.5, 2.5, (3, 4)) / np.array(HEAD_STDS))
    return lambda: detection_loss(lo, de, rpn_t, cl, bd, head_t)["total"], [lo, de, cl, bd]


def case_fpn(rng):
    neck = ImageFpn([2, 3, 4, 5], 3, rng)
    feats = [_param(rng, c, 16 // 2 ** i, 16 // 2 ** i) for i, c in enumerate([2, 3, 4, 5])]
    rs = [rng.standard_normal((3, 16 // 2 ** i, 16 // 2 ** i)) for i in range(4)]

    def fn():
        total = Tensor(0.0)
        for p, r in zip(neck(feats), rs):
            total = core.add(total, _project(p, r))
        return total
    return fn, feats + neck.parameters()


def case_fusion(rng):
    fusion = Fusion(2, "concat" if rng.random() < 0.5 else "add", rng, levels=2)
    f = [_param(rng, 2, 4, 4), _param(rng, 2, 2, 2)]
    s = [_param(rng, 2, 4, 4), _param(rng, 2, 2, 2)]
    rs = [rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 2, 2))]

    def fn():
        a, b = fusion(f, s)
        return core.add(_project(a, rs[0]), _project(b, rs[1]))
    return fn, f + s + fusion.parameters()


def case_stem(rng):
    stem = Stem(2, rng)
    img = Parameter(rng.uniform(0, 1, (3, 32, 32)))
    r = rng.standard_normal((2, 8, 8))
    conv = Conv2d(2, 2, 3, rng, stride=2, pad=1)
    r2 = rng.standard_normal((2, 4, 4))
    return (lambda: core.add(_project(stem(img), r), _project(conv(stem(img)), r2))), \
        [img] + stem.parameters() + conv.parameters()


CASES: dict[str, Callable] = {
    "matmul": case_matmul,
    "conv2d": case_conv2d,
    "gelu": case_gelu,
    "graph_conv": case_graph_conv,
    "gcn_block": case_gcn_block,
    "spgcn": case_spgcn,
    "unpool": case_unpool,
    "roi_align": case_roi_align,
    "rpn_head": case_rpn_head,
    "detection_head": case_detection_head,
    "softmax_cross_entropy": case_softmax_ce,
    "bce_with_logits": case_bce,
    "smooth_l1": case_smooth_l1,
    "detection_loss": case_detection_loss,
    "image_fpn": case_fpn,
    "fusion": case_fusion,
    "stem_downsample": case_stem,
}


def check_op(name: str, seed: int, eps: float = EPS, max_coords: int | None = None) -> float:
    """Max relative error of backward against central differences for one op and seed."""
    if name not in CASES:
        raise KeyError(f"unknown op {name!r}; choose from {sorted(CASES)}")
    rng = make_rng(seed)
    fn, params = CASES[name](rng)
    return grad_check(fn, params, eps=eps, max_coords=max_coords, rng=make_rng(seed + 10_000))


def run_suite(names=None, seeds=range(5), eps: float = EPS) -> dict[str, list[float]]:
    return {name: [check_op(name, s, eps) for s in seeds] for name in (names or CASES)}
