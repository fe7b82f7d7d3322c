"""Max-relative multi-head graph convolution and the residual GCN block."""
from __future__ import annotations

import numpy as np

from . import core
from .core import Parameter, Tensor
from .nn import Linear, Module, kaiming_uniform
from .patch_graph import knn_graph


def max_relative_aggregate(nodes: Tensor, neighbors: np.ndarray) -> Tensor:
    """Per node, the elementwise max of ``x_i - x_j`` over the neighbour list.

    Equivalent to ``x_i - min_j x_j``; with the self loop present the result is >= 0.
    """
    nodes = core.as_tensor(nodes)
    nb = np.asarray(neighbors, dtype=np.intp)
    n, d = nodes.shape
    if nb.ndim != 2 or nb.shape[0] != n:
        raise ValueError(f"neighbour table shape {nb.shape} does not match {n} nodes")
    if nb.size and (nb.min() < 0 or nb.max() >= n):
        raise IndexError("neighbour index out of range")
    x = nodes.data
    gathered = x[nb]                              # N x K x D
    arg = gathered.argmin(axis=1)                 # N x D, first minimum wins
    src = np.take_along_axis(nb, arg, axis=1)     # node index achieving the max difference
    out = x - np.take_along_axis(gathered, arg[:, None, :], axis=1)[:, 0, :]

    def bw(g):
        flat = (src * d + np.arange(d)[None, :]).ravel()
        scattered = np.bincount(flat, weights=g.ravel(), minlength=n * d).reshape(n, d)
        return (g - scattered,)

    return Tensor(out, (nodes,), bw, "max_relative")


def head_matmul(x: Tensor, w: Tensor) -> Tensor:
    """Block-diagonal product: head ``k`` of ``x`` (contiguous chunk) times ``w[k]``."""
    n, d_in = x.shape
    h, a, b = w.shape
    if a * h != d_in:
        raise ValueError(f"feature dim {d_in} does not match {h} heads of width {a}")
    xs = x.data.reshape(n, h, a)
    out = np.einsum("nha,hab->nhb", xs, w.data).reshape(n, h * b)

    def bw(g):
        gs = g.reshape(n, h, b)
        gx = np.einsum("nhb,hab->nha", gs, w.data).reshape(n, d_in) if x.requires_grad else None
        gw = np.einsum("nha,nhb->hab", xs, gs) if w.requires_grad else None
        return gx, gw

    return Tensor(out, (x, w), bw, "head_matmul")


class GraphConvLayer(Module):
    def __init__(self, d_in: int, d_out: int, heads: int, rng: np.random.Generator):
        if d_in % heads or d_out % heads:
            raise ValueError(f"dims {d_in}->{d_out} not divisible by {heads} heads")
        self.heads = heads
        a, b = d_in // heads, d_out // heads
        self.w_psi = Parameter(kaiming_uniform(rng, (heads, a, b), a), "w_psi")

    def __call__(self, nodes: Tensor, neighbors: np.ndarray) -> Tensor:
        return head_matmul(max_relative_aggregate(nodes, neighbors), self.w_psi)


def graph_conv(layer: GraphConvLayer, nodes: Tensor, neighbors: np.ndarray) -> Tensor:
    return layer(nodes, neighbors)


class GcnBlock(Module):
    """``Y = gelu(GC(X W_i)) W_o + X`` followed by ``Z = gelu(Y W_i') W_o' + Y``.

    The neighbour table is rebuilt from the block input unless one is passed in.
    """

    def __init__(self, dim: int, heads: int, k: int, rng: np.random.Generator, ffn_ratio: int = 4):
        self.k = k
        self.fc_in = Linear(dim, dim, rng)
        self.gconv = GraphConvLayer(dim, dim, heads, rng)
        self.fc_out = Linear(dim, dim, rng)
        self.ffn_in = Linear(dim, ffn_ratio * dim, rng)
        self.ffn_out = Linear(ffn_ratio * dim, dim, rng)

    def __call__(self, nodes: Tensor, neighbors: np.ndarray | None = None) -> Tensor:
        if neighbors is None:
            neighbors = knn_graph(nodes.data, min(self.k, nodes.shape[0]))
        y = core.add(self.fc_out(core.gelu(self.gconv(self.fc_in(nodes), neighbors))), nodes)
        return core.add(self.ffn_out(core.gelu(self.ffn_in(y))), y)

    def zero_init(self) -> None:
        for p in self.parameters():
            p.data[...] = 0.0


def gcn_block(block: GcnBlock, nodes: Tensor, neighbors: np.ndarray | None = None) -> Tensor:
    return block(nodes, neighbors)
