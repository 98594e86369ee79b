"""Pure numpy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_core`` module; selected
automatically when the extension is not built. Loops are vectorized over
queries or samples instead of running per element.
"""

from __future__ import annotations

import math
from itertools import combinations

import numpy as np

from ._kdtree import TreeArrays, build_tree  # noqa: F401  (re-exported kernel)

NAME = "python"

COINCIDENT_EPS = 1e-9
PARALLEL_EPS = 1e-6
COLLINEAR_TOLERANCE = 1e-9


def _dist(diff: np.ndarray) -> np.ndarray:
    # evaluation order matches the compiled kernel: (dx*dx + dy*dy) + dz*dz
    x, y, z = diff[..., 0], diff[..., 1], diff[..., 2]
    return np.sqrt(x * x + y * y + z * z)


def _collect_radius(tree: TreeArrays, queries: np.ndarray, radii: np.ndarray):
    q_parts, i_parts, d_parts = [], [], []
    pts = tree.points

    def visit(node: int, qsel: np.ndarray) -> None:
        if tree.left[node] < 0:
            ids = tree.perm[tree.start[node]:tree.end[node]]
            if len(ids) == 0:
                return
            d = _dist(pts[ids][None, :, :] - queries[qsel][:, None, :])
            qi, pj = np.nonzero(d <= radii[qsel][:, None])
            if len(qi):
                q_parts.append(qsel[qi])
                i_parts.append(ids[pj])
                d_parts.append(d[qi, pj])
            return
        delta = queries[qsel, tree.dim[node]] - tree.split[node]
        r = radii[qsel]
        go_left = qsel[delta <= r]
        go_right = qsel[-delta <= r]
        if len(go_left):
            visit(int(tree.left[node]), go_left)
        if len(go_right):
            visit(int(tree.right[node]), go_right)

    if len(pts) and len(queries):
        visit(0, np.arange(len(queries)))
    if not q_parts:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    return np.concatenate(q_parts), np.concatenate(i_parts), np.concatenate(d_parts)


def radius_batch(tree: TreeArrays, queries: np.ndarray, radii: np.ndarray):
    """CSR neighbor lists: ``(offsets, indices, distances)``, rows sorted by (distance, index)."""
    queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    radii = np.ascontiguousarray(radii, dtype=np.float64).reshape(-1)
    q, idx, dist = _collect_radius(tree, queries, radii)
    order = np.lexsort((idx, dist, q))
    counts = np.bincount(q, minlength=len(queries))
    offsets = np.zeros(len(queries) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, idx[order].astype(np.int64), dist[order]


def radius_count(tree: TreeArrays, queries: np.ndarray, radius: float) -> np.ndarray:
    queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    q, _, _ = _collect_radius(tree, queries, np.full(len(queries), float(radius)))
    return np.bincount(q, minlength=len(queries)).astype(np.int64)


def knn_batch(tree: TreeArrays, queries: np.ndarray, k: int):
    """The ``min(k, N)`` nearest points per query as ``(indices, distances)`` matrices."""
    queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    n = len(tree.points)
    kk = min(int(k), n)
    nq = len(queries)
    if kk == 0 or nq == 0:
        return np.zeros((nq, kk), dtype=np.int64), np.zeros((nq, kk))
    # descend along each query's path to the deepest node still holding >= kk
    # points; the kk-th distance inside it bounds the true kk-th neighbor
    node = np.zeros(nq, dtype=np.int64)
    while True:
        inner = tree.left[node] >= 0
        if not inner.any():
            break
        go_left = queries[np.arange(nq), tree.dim[node]] <= tree.split[node]
        child = np.where(go_left, tree.left[node], tree.right[node])
        size = tree.end[child] - tree.start[child]
        step = inner & (size >= kk)
        if not step.any():
            break
        node = np.where(step, child, node)
    bound = np.empty(nq)
    for nd in np.unique(node):
        sel = np.nonzero(node == nd)[0]
        ids = tree.perm[tree.start[nd]:tree.end[nd]]
        d = _dist(tree.points[ids][None, :, :] - queries[sel][:, None, :])
        bound[sel] = np.partition(d, kk - 1, axis=1)[:, kk - 1]
    offsets, idx, dist = radius_batch(tree, queries, bound)
    rows = offsets[:-1, None] + np.arange(kk)[None, :]
    return idx[rows], dist[rows]


def voxel_order(keys: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Stable order by voxel key, then x, y, z."""
    return np.lexsort((points[:, 2], points[:, 1], points[:, 0], keys))


def _segment_sums(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Per-segment sums accumulated left to right, one slot at a time."""
    counts = np.diff(offsets)
    out = np.zeros((len(counts),) + values.shape[1:])
    for slot in range(int(counts.max(initial=0))):
        rows = np.nonzero(counts > slot)[0]
        out[rows] += values[offsets[rows] + slot]
    return out


def csr_covariances(points: np.ndarray, offsets: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    """Population covariance of every CSR neighborhood, shape (n, 3, 3)."""
    counts = np.diff(offsets)
    c = np.where(counts > 0, counts, 1).astype(np.float64)
    x = points[neighbors]
    means = _segment_sums(x, offsets) / c[:, None]
    d = x - np.repeat(means, counts, axis=0)
    outer = d[:, :, None] * d[:, None, :]
    return _segment_sums(outer, offsets) / c[:, None, None]


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # same evaluation order as the compiled kernel; einsum may reorder the sum
    return a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1] + a[:, 2] * b[:, 2]


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.column_stack([a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1],
                            a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2],
                            a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]])


def _pair_features(ps, ns, pt, nt):
    """Vectorized oriented Darboux features; returns (alpha, phi, theta, ok)."""
    d = pt - ps
    dn = _dist(d)
    ok = dn >= COINCIDENT_EPS
    dh = d / np.where(ok, dn, 1.0)[:, None]
    a1 = np.abs(_dot(ns, dh))
    a2 = np.abs(_dot(nt, dh))
    swap = (a1 < a2)[:, None]
    u = np.where(swap, nt, ns)
    tn = np.where(swap, ns, nt)
    dh = np.where(swap, -dh, dh)
    v = _cross(u, dh)
    vn = _dist(v)
    ok &= vn >= PARALLEL_EPS
    v = v / np.where(ok, vn, 1.0)[:, None]
    w = _cross(u, v)
    alpha = _dot(v, tn)
    phi = _dot(u, dh)
    theta = np.arctan2(_dot(w, tn), _dot(u, tn))
    theta = np.where(theta <= -np.pi, np.pi, theta)
    return alpha, phi, theta, ok


def _bin(x: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    b = np.floor(((x - lo) / (hi - lo)) * bins).astype(np.int64)
    return np.clip(b, 0, bins - 1)


def spfh_batch(points, normals, centers, offsets, neighbors, bins: int):
    """Simplified point feature histograms for ``centers``.

    ``offsets``/``neighbors`` give each center's in-radius neighbor list. Returns
    the (n, 3*bins) histograms, each third normalized to 100, and the number of
    pairs that contributed (0 means no usable neighbor).
    """
    points = np.asarray(points, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.int64)
    offsets = np.asarray(offsets, dtype=np.int64)
    neighbors = np.asarray(neighbors, dtype=np.int64)
    nc = len(centers)
    hist = np.zeros((nc, 3 * bins))
    counts = np.zeros(nc, dtype=np.int64)
    if nc == 0 or len(neighbors) == 0:
        return hist, counts
    row = np.repeat(np.arange(nc), np.diff(offsets))
    p = centers[row]
    q = neighbors
    # pairs need both normals; a center without one has no frame
    keep = (p != q) & np.any(normals[q] != 0.0, axis=1) & np.any(normals[p] != 0.0, axis=1)
    row, p, q = row[keep], p[keep], q[keep]
    alpha, phi, theta, ok = _pair_features(points[p], normals[p], points[q], normals[q])
    row = row[ok]
    flat = np.concatenate([
        row * (3 * bins) + _bin(alpha[ok], -1.0, 1.0, bins),
        row * (3 * bins) + bins + _bin(phi[ok], -1.0, 1.0, bins),
        row * (3 * bins) + 2 * bins + _bin(theta[ok], -np.pi, np.pi, bins),
    ])
    hist = np.bincount(flat, minlength=nc * 3 * bins).astype(np.float64).reshape(nc, 3 * bins)
    counts = np.bincount(row, minlength=nc).astype(np.int64)
    has = counts > 0
    hist[has] *= (100.0 / counts[has])[:, None]
    return hist, counts


def _confident(best_count: int, m: int, s: int, n_done: int, confidence: float) -> bool:
    if best_count <= 0:
        return False
    p = (best_count / m) ** s
    if p >= 1.0:
        return True
    return n_done * math.log1p(-p) <= math.log(1.0 - confidence)


def _fit_batch(S: np.ndarray, T: np.ndarray):
    cs = S.mean(axis=1)
    ct = T.mean(axis=1)
    A = S - cs[:, None, :]
    B = T - ct[:, None, :]
    sv = np.linalg.svd(A, compute_uv=False)
    degenerate = (sv[:, 0] == 0.0) | (sv[:, 1] <= COLLINEAR_TOLERANCE * sv[:, 0])
    H = np.einsum("bni,bnj->bij", A, B)
    U, _, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, 1, 2)
    Ut = np.swapaxes(U, 1, 2)
    d = np.sign(np.linalg.det(V @ Ut))
    d[d == 0.0] = 1.0
    D = np.zeros_like(H)
    D[:, 0, 0] = 1.0
    D[:, 1, 1] = 1.0
    D[:, 2, 2] = d
    R = V @ D @ Ut
    t = ct - np.einsum("bij,bj->bi", R, cs)
    return R, t, degenerate


def ransac_block(src, tgt, samples, threshold: float, edge_ratio: float, n_done: int,
                 max_iterations: int, confidence: float, best_count: int,
                 best_rmse: float, best_iter: int, chunk: int = 256):
    """Evaluate pre-drawn minimal samples sequentially.

    Returns ``(best_count, best_rmse, best_iter, n_done, stopped)``; ``best_iter``
    is the global iteration index of the best hypothesis.
    """
    src = np.ascontiguousarray(src, dtype=np.float64)
    tgt = np.ascontiguousarray(tgt, dtype=np.float64)
    samples = np.ascontiguousarray(samples, dtype=np.int64)
    m = len(src)
    s = samples.shape[1]
    pairs = list(combinations(range(s), 2))
    for c0 in range(0, len(samples), chunk):
        blk = samples[c0:c0 + chunk]
        S = src[blk]
        T = tgt[blk]
        valid = np.ones(len(blk), dtype=bool)
        for a, b in pairs:
            ds = _dist(S[:, a] - S[:, b])
            dt = _dist(T[:, a] - T[:, b])
            valid &= ~((ds < dt * edge_ratio) | (dt < ds * edge_ratio))
        counts = np.zeros(len(blk), dtype=np.int64)
        rmses = np.full(len(blk), np.inf)
        if valid.any():
            R, t, degenerate = _fit_batch(S[valid], T[valid])
            moved = np.einsum("bij,mj->bmi", R, src) + t[:, None, :]
            d = moved - tgt[None, :, :]
            x, y, z = d[..., 0], d[..., 1], d[..., 2]
            d2 = x * x + y * y + z * z
            inl = np.sqrt(d2) <= threshold
            cnt = inl.sum(axis=1)
            sse = np.where(inl, d2, 0.0).sum(axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                rm = np.sqrt(sse / cnt)
            cnt[degenerate] = 0
            vi = np.nonzero(valid)[0]
            counts[vi] = cnt
            rmses[vi] = rm
            valid[vi[degenerate]] = False
        for j in range(len(blk)):
            if n_done >= max_iterations:
                return best_count, best_rmse, best_iter, n_done, True
            n_done += 1
            if valid[j] and counts[j] > 0:
                c, r = int(counts[j]), float(rmses[j])
                if c > best_count or (c == best_count and r < best_rmse):
                    best_count, best_rmse, best_iter = c, r, n_done - 1
            if _confident(best_count, m, s, n_done, confidence):
                return best_count, best_rmse, best_iter, n_done, True
    stopped = n_done >= max_iterations
    return best_count, best_rmse, best_iter, n_done, stopped
