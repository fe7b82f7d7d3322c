"""Four-stage GCN backbone and the FPN neck that maps it to a uniform-width pyramid."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import core
from .core import Tensor
from .graph_conv import GcnBlock
from .nn import Conv2d, Module
from .patch_graph import Stem, check_image_size, grid_to_nodes, nodes_to_grid

LEVEL_IDS = (2, 3, 4, 5)
LEVEL_STRIDES = (4, 8, 16, 32)


@dataclass
class MsgcnConfig:
    stage_depths: list = field(default_factory=lambda: [2, 2, 6, 2])
    stage_dims: list = field(default_factory=lambda: [80, 160, 400, 640])
    k: int = 9
    heads: int = 4
    width_scale: float = 1.0
    neck_dim: int = 256
    ffn_ratio: int = 4

    def __post_init__(self):
        if len(self.stage_depths) != 4 or len(self.stage_dims) != 4:
            raise ValueError("MSGCN needs exactly four stages")
        if self.width_scale <= 0:
            raise ValueError("width_scale must be positive")
        if self.k < 1 or self.heads < 1:
            raise ValueError("k and heads must be positive")
        for d in self.dims:
            if d % self.heads:
                raise ValueError(f"stage dim {d} not divisible by {self.heads} heads")

    @property
    def dims(self) -> list[int]:
        return [max(1, int(round(d * self.width_scale))) for d in self.stage_dims]

    @property
    def fpn_dim(self) -> int:
        return max(1, int(round(self.neck_dim * self.width_scale)))


DESK_PROFILE = dict(stage_depths=[1, 1, 2, 1], width_scale=1 / 8, k=9, heads=2)


class Msgcn(Module):
    """stem -> stage1 -> down -> stage2 -> down -> stage3 -> down -> stage4."""

    def __init__(self, cfg: MsgcnConfig, rng: np.random.Generator):
        self.cfg = cfg
        dims = cfg.dims
        self.stem = Stem(dims[0], rng)
        self.stages = [[GcnBlock(dims[s], cfg.heads, cfg.k, rng, cfg.ffn_ratio)
                        for _ in range(cfg.stage_depths[s])] for s in range(4)]
        self.downs = [Conv2d(dims[s], dims[s + 1], 3, rng, stride=2, pad=1) for s in range(3)]

    def named_parameters(self, prefix: str = ""):
        yield from self.stem.named_parameters(prefix + "stem.")
        for s, blocks in enumerate(self.stages):
            for b, block in enumerate(blocks):
                yield from block.named_parameters(f"{prefix}stage{s + 1}.{b}.")
            if s < 3:
                yield from self.downs[s].named_parameters(f"{prefix}down{s + 1}.")

    def __call__(self, img) -> list[Tensor]:
        x = self.stem(img)
        outs = []
        for s, blocks in enumerate(self.stages):
            if s > 0:
                x = downsample(self.downs[s - 1], x)
            _, hg, wg = x.shape
            nodes = grid_to_nodes(x)
            for block in blocks:
                nodes = block(nodes)
            x = nodes_to_grid(nodes, hg, wg)
            outs.append(x)
        return outs

    def out_shapes(self, h: int, w: int) -> list[tuple[int, int, int]]:
        c, h, w = self.stem.out_shape(h, w)
        shapes = [(c, h, w)]
        for down in self.downs:
            h, w = down.out_hw(h, w)
            shapes.append((down.out_channels, h, w))
        return shapes


def downsample(conv: Conv2d, fmap: Tensor) -> Tensor:
    """3x3 stride-2 convolution halving an even-sized grid."""
    _, h, w = fmap.shape
    if h % 2 or w % 2:
        raise ValueError(f"downsample needs even extents, got {h}x{w}")
    return conv(fmap)


def msgcn_forward(model: Msgcn, img) -> list[Tensor]:
    return model(img)


class ImageFpn(Module):
    """Lateral 1x1 convs, nearest-neighbour top-down pathway, 3x3 smoothing."""

    def __init__(self, in_dims: list[int], out_dim: int, rng: np.random.Generator):
        self.lateral = [Conv2d(d, out_dim, 1, rng, pad=0) for d in in_dims]
        self.smooth = [Conv2d(out_dim, out_dim, 3, rng) for _ in in_dims]

    def __call__(self, feats: list[Tensor]) -> list[Tensor]:
        lat = [conv(f) for conv, f in zip(self.lateral, feats)]
        merged = [None] * len(lat)
        merged[-1] = lat[-1]
        for i in range(len(lat) - 2, -1, -1):
            merged[i] = core.add(lat[i], core.upsample_nearest2x(merged[i + 1]))
        return [conv(m) for conv, m in zip(self.smooth, merged)]


def build_image_fpn(neck: ImageFpn, backbone_outputs: list[Tensor]) -> list[Tensor]:
    return neck(backbone_outputs)


def pyramid_shapes(cfg: MsgcnConfig, h: int, w: int) -> dict:
    """Shape table of the full pipeline, derived with the same arithmetic the layers use."""
    check_image_size(h, w)
    dims = cfg.dims
    hw = []
    ch, cw = h, w
    for _ in range(2):
        ch, cw = core.conv_out_size(ch, 3, 2, 1), core.conv_out_size(cw, 3, 2, 1)
    hw.append((ch, cw))
    for _ in range(3):
        ch, cw = core.conv_out_size(ch, 3, 2, 1), core.conv_out_size(cw, 3, 2, 1)
        hw.append((ch, cw))
    s_levels = [(core.conv_out_size(h, 3, s, 1), core.conv_out_size(w, 3, s, 1)) for s in LEVEL_STRIDES]
    return {
        "input": (3, h, w),
        "stages": [(d, a, b) for d, (a, b) in zip(dims, hw)],
        "depths": list(cfg.stage_depths),
        "fpn": [(cfg.fpn_dim, a, b) for a, b in hw],
        "recovered": (cfg.fpn_dim, h, w),
        "superpixel_fpn": [(cfg.fpn_dim, a, b) for a, b in s_levels],
    }
