"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation in the package is a function in this module
that returns a new :class:`Tensor` carrying a closure which maps the output
gradient to gradients for each parent.  :func:`backward` walks the recorded
graph in a deterministic reverse topological order.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

DTYPE = np.float64

CHECK_FINITE = True

_GRAD_ENABLED = True

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, parents: Sequence["Tensor"] = (), backward: Callable | None = None,
                 name: str = ""):
        data = np.asarray(data, dtype=DTYPE)
        if CHECK_FINITE and not np.isfinite(data).all():
            raise NonFiniteError(f"non-finite values produced by {name or 'operation'}")
        self.data = data
        self.name = name
        live = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        self.requires_grad = live and backward is not None
        if self.requires_grad:
            self._parents = tuple(parents)
            self._backward = backward
        else:
            self._parents = ()
            self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}{', grad' if self.requires_grad else ''})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self, (1, 0))

    def sum(self):
        return tsum(self)


class Parameter(Tensor):
    """A learnable leaf.  ``grad`` accumulates across :func:`backward` calls."""

    __slots__ = ("grad",)

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=DTYPE), name=name)
        self.requires_grad = True
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class no_grad:
    """Context manager that stops graph recording (inference)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into ``grad`` of every reachable Parameter."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(a.data * b.data, (a, b), bw, "mul")


def gelu(x: Tensor) -> Tensor:
    """Exact GeLU, ``x * Phi(x)`` with the Gaussian CDF written through erf."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return Tensor(x.data * cdf, (x,), bw, "gelu")


# shape ----------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape

    def bw(g):
        return (g.reshape(src),)

    return Tensor(x.data.reshape(shape), (x,), bw, "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (g.transpose(inverse),)

    return Tensor(x.data.transpose(axes), (x,), bw, "transpose")


def getitem(x: Tensor, index) -> Tensor:
    def bw(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return Tensor(x.data[index], (x,), bw, "getitem")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor(np.concatenate([x.data for x in xs], axis=axis), xs, bw, "concat")


def pad2d(x: Tensor, pad: int) -> Tensor:
    """Zero-pad the two trailing axes of a ``C x H x W`` map."""
    def bw(g):
        return (g[:, pad:g.shape[1] - pad, pad:g.shape[2] - pad],)

    return Tensor(np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))), (x,), bw, "pad2d")


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """``x[index]`` along the first axis; gradients are scatter-added."""
    index = np.asarray(index, dtype=np.intp)
    n = x.shape[0]

    def bw(g):
        flat = g.reshape(index.size, -1)
        out = np.empty((n, flat.shape[1]))
        for c in range(flat.shape[1]):
            out[:, c] = np.bincount(index.ravel(), weights=flat[:, c], minlength=n)
        return (out.reshape(x.shape),)

    return Tensor(x.data[index], (x,), bw, "gather_rows")


# reductions -----------------------------------------------------------------

def tsum(x: Tensor) -> Tensor:
    def bw(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor(x.data.sum(), (x,), bw, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size

    def bw(g):
        return (np.full(x.shape, float(g) / n),)

    return Tensor(x.data.mean(), (x,), bw, "mean")


# linear algebra -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor(a.data @ b.data, (a, b), bw, "matmul")


def conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    out = (n + 2 * pad - k) // stride + 1
    if out < 1:
        raise ValueError(f"non-positive conv output extent for n={n}, k={k}, stride={stride}, pad={pad}")
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of a ``C x H x W`` map with ``C' x C x kh x kw`` weights."""
    if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0]:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, weight {w.shape}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    c, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(wd, kw, stride, pad)
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    s0, s1, s2 = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, shape=(c, kh, kw, ho, wo), strides=(s0, s1, s2, s1 * stride, s2 * stride), writeable=False)
    cols = cols.reshape(c * kh * kw, ho * wo)
    wmat = w.data.reshape(co, -1)
    out = wmat @ cols
    if b is not None:
        out += b.data.reshape(co, 1)
    out = out.reshape(co, ho, wo)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.reshape(co, ho * wo)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(c, kh, kw, ho, wo)
            gxp = np.zeros(xp.shape)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
            gx = gxp[:, pad:pad + h, pad:pad + wd] if pad else gxp
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1).reshape(b.shape)

    return Tensor(out, parents, bw, "conv2d")


def upsample_nearest2x(x: Tensor) -> Tensor:
    c, h, w = x.shape

    def bw(g):
        return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)

    return Tensor(x.data.repeat(2, axis=1).repeat(2, axis=2), (x,), bw, "upsample")


# losses ---------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean negative log-softmax at ``targets``; max-subtracted for stability.

    ``weights`` (optional, per-row) turns the mean into a weighted sum divided
    by ``weights.sum()``.
    """
    targets = np.asarray(targets, dtype=np.intp)
    n, c = logits.shape
    if targets.shape != (n,):
        raise ValueError("one target per row required")
    if n and (targets.min() < 0 or targets.max() >= c):
        raise ValueError(f"target out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    wts = np.ones(n) if weights is None else np.asarray(weights, dtype=DTYPE)
    denom = max(wts.sum(), 1e-12) if n else 1.0
    loss = -(wts * logp[np.arange(n), targets]).sum() / denom

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), targets] -= 1.0
        return (float(g) * p * (wts / denom)[:, None],)

    return Tensor(loss, (logits,), bw, "softmax_ce")


def bce_with_logits(logits: Tensor, targets, normalizer: float | None = None) -> Tensor:
    """Binary cross entropy on raw logits, summed and divided by ``normalizer`` (default: count)."""
    t = np.asarray(targets, dtype=DTYPE)
    x = logits.data
    norm = float(normalizer if normalizer is not None else max(x.size, 1))
    loss = (np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))).sum() / norm

    def bw(g):
        sig = 0.5 * (1.0 + np.tanh(0.5 * x))
        return (float(g) * (sig - t) / norm,)

    return Tensor(loss, (logits,), bw, "bce")


def smooth_l1(pred: Tensor, target, beta: float = 1.0, normalizer: float | None = None) -> Tensor:
    """Huber-style loss: ``0.5 d^2/beta`` inside ``|d| < beta``, ``|d| - beta/2`` outside."""
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=DTYPE)
    if t.shape != pred.shape:
        raise ValueError(f"smooth_l1 shape mismatch: {pred.shape} vs {t.shape}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    d = pred.data - t
    ad = np.abs(d)
    inside = ad < beta
    vals = np.where(inside, 0.5 * d * d / beta, ad - 0.5 * beta)
    norm = float(normalizer if normalizer is not None else max(d.size, 1))

    def bw(g):
        return (float(g) * np.where(inside, d / beta, np.sign(d)) / norm,)

    return Tensor(vals.sum() / norm, (pred,), bw, "smooth_l1")
