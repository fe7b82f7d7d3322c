"""SLIC superpixels on RGB and the Gaussian-affinity superpixel graph built from them."""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

SIGMA2 = 0.1 * np.pi

DEFAULT_M_TARGET = 196
DEFAULT_COMPACTNESS = 0.2
DEFAULT_ITERS = 10

_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass
class SuperpixelMap:
    labels: np.ndarray   # H x W, values in [0, count)
    count: int
    sizes: np.ndarray    # pixels per label

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "SuperpixelMap":
        labels = np.asarray(labels, dtype=np.intp)
        count = int(labels.max()) + 1
        return cls(labels, count, np.bincount(labels.ravel(), minlength=count))


@dataclass
class SuperpixelGraph:
    features: np.ndarray    # M x 3 mean RGB
    centroids: np.ndarray   # M x 2 (x, y) in [0, 1]
    adjacency: np.ndarray   # M x M Gaussian affinity
    normalized: np.ndarray  # D^-1/2 A D^-1/2
    sigma2: float = SIGMA2


def _gradient_magnitude(img: np.ndarray) -> np.ndarray:
    p = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    gx = p[:, 1:-1, 2:] - p[:, 1:-1, :-2]
    gy = p[:, 2:, 1:-1] - p[:, :-2, 1:-1]
    return (gx * gx).sum(0) + (gy * gy).sum(0)


def _seed_centers(img: np.ndarray, m_target: int) -> tuple[np.ndarray, float]:
    _, h, w = img.shape
    step = np.sqrt(h * w / m_target)
    ny = max(1, int(round(h / step)))
    nx = max(1, int(round(w / step)))
    ys = ((np.arange(ny) + 0.5) * h / ny).astype(int)
    xs = ((np.arange(nx) + 0.5) * w / nx).astype(int)
    grad = _gradient_magnitude(img)
    centers = []
    for y in ys:
        for x in xs:
            y0, y1 = max(0, y - 1), min(h, y + 2)
            x0, x1 = max(0, x - 1), min(w, x + 2)
            win = grad[y0:y1, x0:x1]
            dy, dx = np.unravel_index(np.argmin(win), win.shape)
            cy, cx = y0 + dy, x0 + dx
            centers.append([*img[:, cy, cx], cy, cx])
    return np.array(centers, dtype=np.float64), step


def _split_components(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Give every 4-connected component of every label its own id."""
    comp = np.zeros(labels.shape, dtype=np.intp)
    nxt = 0
    for lab, sl in enumerate(ndimage.find_objects(labels + 1)):
        if sl is None:
            continue
        mask = labels[sl] == lab
        cc, n = ndimage.label(mask, structure=_FOUR)
        sub = comp[sl]
        sub[mask] = cc[mask] + nxt - 1
        nxt += n
    return comp, nxt


def _merge_small(comp: np.ndarray, n: int, min_size: float) -> np.ndarray:
    """Fold components below ``min_size`` into their largest 4-adjacent neighbour."""
    sizes = np.bincount(comp.ravel(), minlength=n).astype(np.int64)
    adj: list[set] = [set() for _ in range(n)]
    for a, b in ((comp[:, :-1], comp[:, 1:]), (comp[:-1, :], comp[1:, :])):
        diff = a != b
        pairs = np.unique(np.stack([a[diff], b[diff]], 1), axis=0)
        for u, v in pairs:
            adj[u].add(int(v))
            adj[v].add(int(u))
    parent = np.arange(n)
    alive = n
    heap = [(int(sizes[i]), i) for i in range(n) if sizes[i] < min_size]
    heapq.heapify(heap)
    while heap and alive > 1:
        size, i = heapq.heappop(heap)
        if parent[i] != i or size != sizes[i] or not adj[i]:
            continue
        target = max(adj[i], key=lambda j: (sizes[j], -j))
        parent[i] = target
        sizes[target] += sizes[i]
        sizes[i] = 0
        for j in adj[i]:
            adj[j].discard(i)
            if j != target:
                adj[j].add(target)
                adj[target].add(j)
        adj[target].discard(target)
        adj[i] = set()
        alive -= 1
        if sizes[target] < min_size:
            heapq.heappush(heap, (int(sizes[target]), target))
    # path compression
    for i in range(n):
        r = i
        while parent[r] != r:
            r = parent[r]
        parent[i] = r
    _, relabeled = np.unique(parent[comp], return_inverse=True)
    return relabeled.reshape(comp.shape)


def slic_segment(img, m_target: int = DEFAULT_M_TARGET, compactness: float = DEFAULT_COMPACTNESS,
                 iters: int = DEFAULT_ITERS) -> SuperpixelMap:
    """SLIC clustering in (R, G, B, y, x) followed by a connectivity pass.

    Distance is ``sqrt(d_rgb^2 + (compactness * d_xy / S)^2)`` with ``S`` the
    seed spacing and RGB in [0, 1].  Components smaller than ``S^2 / 4`` are
    merged into their largest adjacent segment, so the final count may differ
    from ``m_target``.
    """
    img = np.asarray(img, dtype=np.float64)
    _, h, w = img.shape
    if not 4 <= m_target <= h * w / 16:
        raise ValueError(f"m_target={m_target} outside [4, H*W/16={h * w // 16}]")
    centers, step = _seed_centers(img, m_target)
    radius = int(np.ceil(step))
    spatial = (compactness / step) ** 2
    yy, xx = np.mgrid[0:h, 0:w]
    labels = np.full((h, w), -1, dtype=np.intp)
    for _ in range(iters):
        dist = np.full((h, w), np.inf)
        for k, (r, g, b, cy, cx) in enumerate(centers):
            y0, y1 = max(0, int(cy) - radius), min(h, int(cy) + radius + 1)
            x0, x1 = max(0, int(cx) - radius), min(w, int(cx) + radius + 1)
            patch = img[:, y0:y1, x0:x1]
            dc = (patch[0] - r) ** 2 + (patch[1] - g) ** 2 + (patch[2] - b) ** 2
            ds = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2
            d = dc + spatial * ds
            sub = dist[y0:y1, x0:x1]
            better = d < sub
            sub[better] = d[better]
            labels[y0:y1, x0:x1][better] = k
        flat = labels.ravel()
        assigned = flat >= 0
        cnt = np.bincount(flat[assigned], minlength=len(centers))
        keep = cnt > 0
        for col, plane in enumerate((img[0], img[1], img[2], yy, xx)):
            s = np.bincount(flat[assigned], weights=plane.ravel()[assigned], minlength=len(centers))
            centers[keep, col] = s[keep] / cnt[keep]
    if (labels < 0).any():
        miss = labels < 0
        d2 = (yy[miss][:, None] - centers[None, :, 3]) ** 2 + (xx[miss][:, None] - centers[None, :, 4]) ** 2
        labels[miss] = d2.argmin(axis=1)
    comp, n = _split_components(labels)
    final = _merge_small(comp, n, step * step / 4.0)
    return SuperpixelMap.from_labels(final)


def superpixel_features(img, spmap: SuperpixelMap) -> np.ndarray:
    """Mean RGB per superpixel, ``M x 3``."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[1:] != spmap.labels.shape:
        raise ValueError(f"image {img.shape[1:]} and label map {spmap.labels.shape} differ in size")
    flat = spmap.labels.ravel()
    sums = np.stack([np.bincount(flat, weights=img[c].ravel(), minlength=spmap.count)
                     for c in range(img.shape[0])], axis=1)
    return sums / spmap.sizes[:, None]


def superpixel_centroids(spmap: SuperpixelMap) -> np.ndarray:
    """Mean pixel position per label as ``(x, y)``, normalised by ``(W-1, H-1)``."""
    h, w = spmap.labels.shape
    yy, xx = np.mgrid[0:h, 0:w]
    flat = spmap.labels.ravel()
    cx = np.bincount(flat, weights=xx.ravel().astype(np.float64), minlength=spmap.count) / spmap.sizes
    cy = np.bincount(flat, weights=yy.ravel().astype(np.float64), minlength=spmap.count) / spmap.sizes
    return np.stack([cx / max(w - 1, 1), cy / max(h - 1, 1)], axis=1)


def superpixel_adjacency(centroids: np.ndarray, sigma2: float = SIGMA2) -> np.ndarray:
    c = np.asarray(centroids, dtype=np.float64)
    diff = c[:, None, :] - c[None, :, :]
    d2 = diff[..., 0] ** 2 + diff[..., 1] ** 2
    return np.exp(-d2 / sigma2)


def normalize_adjacency(adj: np.ndarray) -> np.ndarray:
    """Symmetric normalisation ``D^-1/2 A D^-1/2`` with ``D`` the row sums."""
    adj = np.asarray(adj, dtype=np.float64)
    deg = adj.sum(axis=1)
    if (deg <= 0).any():
        raise ValueError("adjacency has a zero row sum")
    inv = 1.0 / np.sqrt(deg)
    return adj * inv[:, None] * inv[None, :]


def build_superpixel_graph(img, spmap: SuperpixelMap) -> SuperpixelGraph:
    centroids = superpixel_centroids(spmap)
    adj = superpixel_adjacency(centroids)
    return SuperpixelGraph(superpixel_features(img, spmap), centroids, adj, normalize_adjacency(adj))
