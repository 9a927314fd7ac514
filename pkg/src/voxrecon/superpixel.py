"""Graph-based greedy superpixel segmentation (Felzenszwalb-Huttenlocher).

Feeds the co-planar loss: each segment is treated as a single planar region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class SuperpixelMap:
    """Per-pixel segment labels, contiguous 0..num_segments-1.

    Segments are connected in the 8-neighborhood sense (the merge graph is
    8-connected).
    """

    label: np.ndarray
    num_segments: int

    def __post_init__(self):
        self.label = np.asarray(self.label, dtype=int)
        if self.label.ndim != 2:
            raise ValueError("label must be a 2D array")

    @property
    def height(self) -> int:
        return self.label.shape[0]

    @property
    def width(self) -> int:
        return self.label.shape[1]


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, x: int) -> int:
        p = self.parent
        root = x
        while p[root] != root:
            root = p[root]
        while p[x] != root:  # path compression
            p[x], x = root, p[x]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra


def _grid_edges(image: np.ndarray):
    """8-connected grid edges with euclidean RGB weights.

    Returns (a, b, w) with a < b pixel flat indices.
    """
    h, w = image.shape[:2]
    ids = np.arange(h * w).reshape(h, w)

    def diff(sa, sb):
        d = image[sa] - image[sb]
        return np.sqrt((d * d).sum(axis=-1)).ravel()

    pairs = []
    # right
    pairs.append((ids[:, :-1].ravel(), ids[:, 1:].ravel(), diff((slice(None), slice(None, -1)), (slice(None), slice(1, None)))))
    # down
    pairs.append((ids[:-1, :].ravel(), ids[1:, :].ravel(), diff((slice(None, -1), slice(None)), (slice(1, None), slice(None)))))
    # down-right
    pairs.append((ids[:-1, :-1].ravel(), ids[1:, 1:].ravel(), diff((slice(None, -1), slice(None, -1)), (slice(1, None), slice(1, None)))))
    # down-left
    pairs.append((ids[:-1, 1:].ravel(), ids[1:, :-1].ravel(), diff((slice(None, -1), slice(1, None)), (slice(1, None), slice(None, -1)))))

    a = np.concatenate([p[0] for p in pairs])
    b = np.concatenate([p[1] for p in pairs])
    wgt = np.concatenate([p[2] for p in pairs])
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    return lo, hi, wgt


def felzenszwalb_segment(
    image: np.ndarray,
    k: float = 300.0,
    min_size: int = 500,
    sigma: float = 0.8,
) -> SuperpixelMap:
    """Classic greedy graph segmentation.

    Edges are sorted ascending with (min index, max index) tie-breaking so the
    result is deterministic. Two components merge when the joining edge weight
    does not exceed min over both of internal difference + k/|C|; a final
    ascending pass merges components below `min_size` into their lowest-weight
    neighbor.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w = img.shape[:2]
    if h < 2 or w < 2:
        raise ValueError("image must be at least 2x2")
    if k <= 0:
        raise ValueError("k must be positive")
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    if sigma > 0:
        img = np.stack(
            [ndimage.gaussian_filter(img[:, :, c], sigma, mode="nearest") for c in range(img.shape[2])],
            axis=-1,
        )

    lo, hi, wgt = _grid_edges(img)
    order = np.lexsort((hi, lo, wgt))
    lo, hi, wgt = lo[order], hi[order], wgt[order]

    n = h * w
    uf = _UnionFind(n)
    internal = np.zeros(n)
    threshold = np.full(n, float(k))  # internal(C) + k/|C|, |C| = 1 initially

    for a, b, we in zip(lo.tolist(), hi.tolist(), wgt.tolist()):
        ra = uf.find(a)
        rb = uf.find(b)
        if ra == rb:
            continue
        if we <= threshold[ra] and we <= threshold[rb]:
            root = uf.union(ra, rb)
            internal[root] = we
            threshold[root] = we + k / uf.size[root]

    for a, b in zip(lo.tolist(), hi.tolist()):
        ra = uf.find(a)
        rb = uf.find(b)
        if ra == rb:
            continue
        if uf.size[ra] < min_size or uf.size[rb] < min_size:
            uf.union(ra, rb)

    roots = np.empty(n, dtype=np.int64)
    for i in range(n):
        roots[i] = uf.find(i)
    _, labels = np.unique(roots, return_inverse=True)
    # renumber by first occurrence in scan order for a stable labeling
    first = {}
    remap = np.empty(labels.max() + 1, dtype=int)
    nxt = 0
    for lab in labels.tolist():
        if lab not in first:
            first[lab] = nxt
            nxt += 1
    for lab, new in first.items():
        remap[lab] = new
    labels = remap[labels]
    return SuperpixelMap(labels.reshape(h, w), nxt)
