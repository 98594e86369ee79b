"""Median-split k-d tree stored as flat arrays.

This is the pure-Python builder. The compiled core produces the same
arrays, so either backend's queries can walk either backend's tree.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

LEAF_SIZE = 16


class TreeArrays(NamedTuple):
    points: np.ndarray   # (N, 3) float64, original order
    perm: np.ndarray     # int64, point indices grouped by node
    start: np.ndarray    # int64, node range [start, end) into perm
    end: np.ndarray
    left: np.ndarray     # int64, child ids; -1 marks a leaf
    right: np.ndarray
    dim: np.ndarray      # int64 split axis
    split: np.ndarray    # float64 split coordinate


def build_tree(points: np.ndarray, leaf_size: int = LEAF_SIZE) -> TreeArrays:
    """Split every oversized node of a level at once, on its widest axis.

    Nodes are numbered breadth first with the root at 0.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    perm = np.arange(n, dtype=np.int64)
    starts, ends, links = [np.array([0])], [np.array([n])], []
    level = np.array([0], dtype=np.int64)
    lo, hi = starts[0], ends[0]
    count = 1
    while True:
        size = hi - lo
        big = size > leaf_size
        level, lo, hi, size = level[big], lo[big], hi[big], size[big]
        if not len(level):
            break
        seg_start = np.concatenate([[0], np.cumsum(size)[:-1]])
        seg = np.repeat(np.arange(len(level)), size)
        pos = np.arange(len(seg)) - seg_start[seg] + lo[seg]
        sub = pts[perm[pos]]
        spread = np.maximum.reduceat(sub, seg_start) - np.minimum.reduceat(sub, seg_start)
        d = np.argmax(spread, axis=1)
        key = sub[np.arange(len(sub)), d[seg]]
        perm[pos] = perm[pos][np.lexsort((key, seg))]
        # nodes whose points all coincide stay leaves
        ok = spread[np.arange(len(level)), d] > 0.0
        level, lo, hi, size, d = level[ok], lo[ok], hi[ok], size[ok], d[ok]
        mid = lo + size // 2
        kids = count + np.arange(2 * len(level), dtype=np.int64)
        links.append((level, kids[0::2], kids[1::2], d, pts[perm[mid], d]))
        starts.append(np.column_stack([lo, mid]).ravel())
        ends.append(np.column_stack([mid, hi]).ravel())
        count += len(kids)
        level, lo, hi = kids, starts[-1], ends[-1]

    left = np.full(count, -1, dtype=np.int64)
    right = np.full(count, -1, dtype=np.int64)
    dim = np.zeros(count, dtype=np.int64)
    split = np.zeros(count)
    # left holds coordinates <= split, right holds >= split
    for parent, l_ids, r_ids, d, val in links:
        left[parent], right[parent], dim[parent], split[parent] = l_ids, r_ids, d, val
    tree = TreeArrays(pts, perm, np.concatenate(starts).astype(np.int64),
                      np.concatenate(ends).astype(np.int64), left, right, dim, split)
    for a in tree:
        a.flags.writeable = False
    return tree
