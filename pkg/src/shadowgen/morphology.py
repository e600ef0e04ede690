"""Connected-component labelling (two-pass union-find) and small-region cleanup."""
from __future__ import annotations

import numpy as np

_NEIGHBOURS = {
    1: ((0, -1), (-1, 0)),
    2: ((0, -1), (-1, -1), (-1, 0), (-1, 1)),
}


def _find(parent: list[int], i: int) -> int:
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


def label(mask, connectivity: int = 2) -> tuple[np.ndarray, int]:
    """Label the foreground components of a 2-D boolean ``mask``.

    ``connectivity=1`` joins edge neighbours, ``connectivity=2`` also joins
    diagonal neighbours. Labels are 1..n in raster order of first appearance.
    """
    if connectivity not in _NEIGHBOURS:
        raise ValueError("connectivity must be 1 or 2")
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ValueError("label expects a 2-D mask")
    H, W = m.shape
    offsets = _NEIGHBOURS[connectivity]
    grid = m.tolist()
    labels = [[0] * W for _ in range(H)]
    parent = [0]

    for r in range(H):
        row, lab_row = grid[r], labels[r]
        for c in range(W):
            if not row[c]:
                continue
            best = 0
            seen = []
            for dr, dc in offsets:
                rr, cc = r + dr, c + dc
                if rr < 0 or cc < 0 or cc >= W:
                    continue
                lab = labels[rr][cc]
                if lab:
                    seen.append(lab)
                    if best == 0 or lab < best:
                        best = lab
            if best == 0:
                best = len(parent)
                parent.append(best)
            else:
                root = _find(parent, best)
                for lab in seen:
                    other = _find(parent, lab)
                    if other != root:
                        if other < root:
                            parent[root] = other
                            root = other
                        else:
                            parent[other] = root
            lab_row[c] = best

    # second pass: resolve to roots and number components sequentially
    remap = [0] * len(parent)
    n = 0
    for i in range(1, len(parent)):
        root = _find(parent, i)
        if remap[root] == 0:
            n += 1
            remap[root] = n
        remap[i] = remap[root]
    out = np.asarray(labels, dtype=np.int64).reshape(H, W)
    return np.asarray(remap, dtype=np.int64)[out], n


def remove_small_objects(mask, min_size: int = 50, connectivity: int = 2) -> np.ndarray:
    """Drop foreground components with fewer than ``min_size`` pixels."""
    m = np.asarray(mask, dtype=bool)
    labels, n = label(m, connectivity)
    if n == 0:
        return m.copy()
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    keep = sizes >= min_size
    keep[0] = False
    return keep[labels]


def fill_small_holes(mask, area_threshold: int = 50, connectivity: int = 2) -> np.ndarray:
    """Fill background components smaller than ``area_threshold`` that do not touch the border."""
    m = np.asarray(mask, dtype=bool)
    labels, n = label(~m, connectivity)
    if n == 0:
        return m.copy()
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    border = np.zeros(n + 1, dtype=bool)
    border[labels[0]] = border[labels[-1]] = True
    border[labels[:, 0]] = border[labels[:, -1]] = True
    fill = (sizes < area_threshold) & ~border
    fill[0] = False
    return m | fill[labels]


def d_hole(mask, area_threshold: int = 50, connectivity: int = 2, threshold: float = 0.5) -> int:
    m = np.asarray(mask) > threshold
    return int((fill_small_holes(m, area_threshold, connectivity) != m).sum())


def d_frag(mask, area_threshold: int = 50, connectivity: int = 2, threshold: float = 0.5) -> int:
    m = np.asarray(mask) > threshold
    return int((remove_small_objects(m, area_threshold, connectivity) != m).sum())
