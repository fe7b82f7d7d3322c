"""Image-to-graph plumbing: convolutional stem, node layout, exact k-NN edges."""
from __future__ import annotations

import numpy as np

from . import core
from .core import Tensor
from .nn import Conv2d, Module

_EPS = np.finfo(np.float64).eps


def check_image_size(h: int, w: int, multiple: int = 32) -> None:
    if h < 32 or w < 32 or h % multiple or w % multiple:
        raise ValueError(f"image size {h}x{w} must be at least 32 and divisible by {multiple}")


class Stem(Module):
    """Two 3x3 stride-2 convolutions with a GeLU between: ``3 x H x W -> D x H/4 x W/4``."""

    def __init__(self, out_dim: int, rng: np.random.Generator):
        self.conv1 = Conv2d(3, out_dim, 3, rng, stride=2, pad=1)
        self.conv2 = Conv2d(out_dim, out_dim, 3, rng, stride=2, pad=1)

    def __call__(self, img) -> Tensor:
        img = core.as_tensor(img)
        check_image_size(img.shape[1], img.shape[2])
        return self.conv2(core.gelu(self.conv1(img)))

    def out_shape(self, h: int, w: int) -> tuple[int, int, int]:
        check_image_size(h, w)
        h, w = self.conv1.out_hw(h, w)
        h, w = self.conv2.out_hw(h, w)
        return self.conv2.out_channels, h, w


def stem(module: Stem, img) -> Tensor:
    return module(img)


def grid_to_nodes(fmap: Tensor) -> Tensor:
    """``C x Hg x Wg`` map to ``N x C`` node rows, row-major over the grid."""
    c, h, w = fmap.shape
    return core.transpose(core.reshape(fmap, (c, h * w)), (1, 0))


def nodes_to_grid(nodes: Tensor, hg: int, wg: int) -> Tensor:
    n, c = nodes.shape
    if n != hg * wg:
        raise ValueError(f"{n} nodes do not fill a {hg}x{wg} grid")
    return core.reshape(core.transpose(nodes, (1, 0)), (c, hg, wg))


def knn_graph(features, k: int, chunk: int = 512) -> np.ndarray:
    """Neighbour table ``N x K``: column 0 is the node itself, then the K-1 nearest others.

    Distances are Euclidean in feature space; ties go to the lower index.
    Candidates are screened with the Gram-matrix expansion, then ranked on
    exactly recomputed squared distances so the result does not depend on
    cancellation error in the expansion.
    """
    x = np.asarray(features.data if isinstance(features, Tensor) else features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if not 1 <= k <= n:
        raise ValueError(f"K={k} must lie in [1, N={n}]")
    out = np.empty((n, k), dtype=np.intp)
    out[:, 0] = np.arange(n)
    m = k - 1
    if m == 0:
        return out
    sq = np.einsum("ij,ij->i", x, x)
    slack = 64.0 * (d + 2) * _EPS
    sq_max = sq.max()
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        rows = np.arange(start, stop)
        gram = sq[start:stop, None] + sq[None, :] - 2.0 * (x[start:stop] @ x.T)
        gram[rows - start, rows] = np.inf
        tol = slack * (sq[start:stop] + sq_max) + 1e-300
        if m < n - 1:
            cand = np.argpartition(gram, m, axis=1)[:, :m + 1]
            vals = np.take_along_axis(gram, cand, axis=1)
            order = np.argsort(vals, axis=1)
            cand = np.take_along_axis(cand, order, axis=1)
            vals = np.take_along_axis(vals, order, axis=1)
            clear = vals[:, m] - vals[:, m - 1] > 2.0 * tol
        else:
            cand = np.argsort(gram, axis=1)[:, :m]
            clear = np.ones(stop - start, dtype=bool)
        if clear.any():
            ci = cand[clear, :m]
            ri = rows[clear]
            diff = x[ri][:, None, :] - x[ci]
            dist = np.zeros(ci.shape)
            for col in range(d):
                dist += diff[..., col] * diff[..., col]
            order = np.lexsort((ci, dist), axis=1)
            out[ri, 1:] = np.take_along_axis(ci, order, axis=1)
        if not clear.all():
            local = np.nonzero(~clear)[0]
            _exact_rows(x, gram[local], rows[local], (vals[local, m - 1] + tol[local]), m, out)
    return out


def _exact_rows(x, gram, rows, limit, m, out) -> None:
    """Rank every candidate within ``limit`` on exact distances (ties at the K-th place)."""
    d = x.shape[1]
    ri, ci = np.nonzero(gram <= limit[:, None])
    diff = x[rows[ri]] - x[ci]
    dist = np.zeros(ri.size)
    for col in range(d):
        dist += diff[:, col] * diff[:, col]
    order = np.lexsort((ci, dist, ri))
    counts = np.bincount(ri, minlength=len(rows))
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    pick = order[starts[:, None] + np.arange(m)[None, :]]
    out[rows, 1:] = ci[pick]
