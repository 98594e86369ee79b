# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled kernels: k-d tree build and queries, voxel ordering, covariances, SPFH
histograms and the RANSAC hypothesis loop.

Mirrors ``_fallback`` function for function.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, atan2, floor, pow, log, log1p, M_PI
from libc.stdint cimport int64_t
from libcpp.vector cimport vector
from libcpp.pair cimport pair
from libcpp.algorithm cimport sort

from ._kdtree import TreeArrays

cnp.import_array()

NAME = "compiled"

ctypedef pair[double, int64_t] Hit

cdef double COINCIDENT_EPS = 1e-9
cdef double PARALLEL_EPS = 1e-6
cdef double COLLINEAR_TOLERANCE = 1e-9


cdef struct TreeView:
    const double* pts
    const int64_t* perm
    const int64_t* start
    const int64_t* end
    const int64_t* left
    const int64_t* right
    const int64_t* dim
    const double* split
    int64_t n


cdef class _Tree:
    """Holds contiguous views of a TreeArrays tuple for the duration of a call."""
    cdef const double[:, ::1] pts
    cdef const int64_t[::1] perm, start, end, left, right, dim
    cdef const double[::1] split
    cdef TreeView view

    def __cinit__(self, tree):
        self.pts = np.ascontiguousarray(tree.points, dtype=np.float64)
        self.perm = np.ascontiguousarray(tree.perm, dtype=np.int64)
        self.start = np.ascontiguousarray(tree.start, dtype=np.int64)
        self.end = np.ascontiguousarray(tree.end, dtype=np.int64)
        self.left = np.ascontiguousarray(tree.left, dtype=np.int64)
        self.right = np.ascontiguousarray(tree.right, dtype=np.int64)
        self.dim = np.ascontiguousarray(tree.dim, dtype=np.int64)
        self.split = np.ascontiguousarray(tree.split, dtype=np.float64)
        self.view.n = self.pts.shape[0]
        if self.view.n > 0:
            self.view.pts = &self.pts[0, 0]
            self.view.perm = &self.perm[0]
        self.view.start = &self.start[0]
        self.view.end = &self.end[0]
        self.view.left = &self.left[0]
        self.view.right = &self.right[0]
        self.view.dim = &self.dim[0]
        self.view.split = &self.split[0]


def build_tree(points, int64_t leaf_size=16):
    """Same tree as ``_kdtree.build_tree``, node for node."""
    cdef const double[:, ::1] pts = np.ascontiguousarray(
        np.asarray(points, dtype=np.float64).reshape(-1, 3))
    cdef int64_t n = pts.shape[0]
    cdef vector[int64_t] perm, tmp, start, end, left, right, dim
    cdef vector[double] split
    cdef vector[Hit] keyed
    cdef int64_t i, j, lo, hi, mid, d, node = 0
    cdef double mn[3]
    cdef double mx[3]
    cdef double best, c
    for i in range(n):
        perm.push_back(i)
    tmp.resize(n)
    start.push_back(0); end.push_back(n)
    left.push_back(-1); right.push_back(-1); dim.push_back(0); split.push_back(0.0)
    with nogil:
        while node < <int64_t>start.size():
            lo = start[node]
            hi = end[node]
            if hi - lo > leaf_size:
                for d in range(3):
                    mn[d] = pts[perm[lo], d]
                    mx[d] = mn[d]
                for j in range(lo + 1, hi):
                    for d in range(3):
                        c = pts[perm[j], d]
                        if c < mn[d]:
                            mn[d] = c
                        if c > mx[d]:
                            mx[d] = c
                i = 0
                best = mx[0] - mn[0]
                for d in range(1, 3):
                    if mx[d] - mn[d] > best:
                        best = mx[d] - mn[d]
                        i = d
                if best > 0.0:
                    # order by coordinate, then by current position
                    keyed.clear()
                    for j in range(lo, hi):
                        keyed.push_back(Hit(pts[perm[j], i], j))
                    sort(keyed.begin(), keyed.end())
                    for j in range(lo, hi):
                        tmp[j] = perm[keyed[j - lo].second]
                    for j in range(lo, hi):
                        perm[j] = tmp[j]
                    mid = lo + (hi - lo) // 2
                    dim[node] = i
                    split[node] = pts[perm[mid], i]
                    left[node] = <int64_t>start.size()
                    right[node] = left[node] + 1
                    start.push_back(lo); end.push_back(mid)
                    start.push_back(mid); end.push_back(hi)
                    for j in range(2):
                        left.push_back(-1); right.push_back(-1)
                        dim.push_back(0); split.push_back(0.0)
            node += 1
    tree = TreeArrays(np.asarray(pts), _to_array(perm), _to_array(start), _to_array(end),
                      _to_array(left), _to_array(right), _to_array(dim),
                      _to_float_array(split))
    for a in tree:
        a.flags.writeable = False
    return tree


cdef _to_float_array(vector[double]& v):
    out = np.empty(v.size(), dtype=np.float64)
    cdef double[::1] o = out
    cdef size_t i
    for i in range(v.size()):
        o[i] = v[i]
    return out


cdef _to_array(vector[int64_t]& v):
    out = np.empty(v.size(), dtype=np.int64)
    cdef int64_t[::1] o = out
    cdef size_t i
    for i in range(v.size()):
        o[i] = v[i]
    return out


cdef inline bint _point_before(const double[:, ::1] p, int64_t a, int64_t b) noexcept nogil:
    cdef int d
    for d in range(3):
        if p[a, d] != p[b, d]:
            return p[a, d] < p[b, d]
    return a < b


def voxel_order(keys, points):
    """Stable order by voxel key, then x, y, z."""
    cdef const int64_t[::1] k = np.ascontiguousarray(keys, dtype=np.int64)
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef int64_t n = k.shape[0]
    cdef vector[pair[int64_t, int64_t]] keyed
    out = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] o = out
    cdef int64_t i, j, lo, cur
    with nogil:
        keyed.reserve(n)
        for i in range(n):
            keyed.push_back(pair[int64_t, int64_t](k[i], i))
        sort(keyed.begin(), keyed.end())
        for i in range(n):
            o[i] = keyed[i].second
        # voxels hold few points, so insertion sort within each run
        lo = 0
        while lo < n:
            i = lo + 1
            while i < n and keyed[i].first == keyed[lo].first:
                cur = o[i]
                j = i - 1
                while j >= lo and _point_before(p, cur, o[j]):
                    o[j + 1] = o[j]
                    j -= 1
                o[j + 1] = cur
                i += 1
            lo = i
    return out


def csr_covariances(points, offsets, neighbors):
    """Population covariance of every CSR neighborhood, shape (n, 3, 3)."""
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef const int64_t[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const int64_t[::1] nb = np.ascontiguousarray(neighbors, dtype=np.int64)
    cdef int64_t n = off.shape[0] - 1
    out = np.zeros((n, 3, 3))
    cdef double[:, :, ::1] o = out
    cdef int64_t i, j, c
    cdef int a, b
    cdef double m[3]
    cdef double acc[9]
    cdef double d[3]
    with nogil:
        for i in range(n):
            c = off[i + 1] - off[i]
            if c == 0:
                continue
            for a in range(3):
                m[a] = 0.0
            for j in range(off[i], off[i + 1]):
                for a in range(3):
                    m[a] += p[nb[j], a]
            for a in range(3):
                m[a] /= c
            for a in range(9):
                acc[a] = 0.0
            for j in range(off[i], off[i + 1]):
                for a in range(3):
                    d[a] = p[nb[j], a] - m[a]
                for a in range(3):
                    for b in range(3):
                        acc[3 * a + b] += d[a] * d[b]
            for a in range(3):
                for b in range(3):
                    o[i, a, b] = acc[3 * a + b] / c
    return out


cdef inline bint _less(Hit a, Hit b) noexcept nogil:
    return a.first < b.first or (a.first == b.first and a.second < b.second)


cdef void _radius_query(const TreeView* t, const double* q, double r,
                        vector[Hit]& out, vector[int64_t]& stack) noexcept nogil:
    cdef int64_t node, k, i, d
    cdef double dx, dy, dz, dist, delta
    out.clear()
    if t.n == 0:
        return
    stack.clear()
    stack.push_back(0)
    while stack.size() > 0:
        node = stack.back()
        stack.pop_back()
        if t.left[node] < 0:
            for k in range(t.start[node], t.end[node]):
                i = t.perm[k]
                dx = t.pts[3 * i] - q[0]
                dy = t.pts[3 * i + 1] - q[1]
                dz = t.pts[3 * i + 2] - q[2]
                dist = sqrt(dx * dx + dy * dy + dz * dz)
                if dist <= r:
                    out.push_back(Hit(dist, i))
        else:
            d = t.dim[node]
            delta = q[d] - t.split[node]
            if -delta <= r:
                stack.push_back(t.right[node])
            if delta <= r:
                stack.push_back(t.left[node])
    sort(out.begin(), out.end())


cdef void _knn_query(const TreeView* t, const double* q, int64_t k,
                     vector[Hit]& best, vector[Hit]& stack) noexcept nogil:
    # stack entries: (lower bound on distance, node id)
    cdef int64_t node, j, i, d
    cdef double dx, dy, dz, dist, delta, bound
    cdef Hit h
    best.clear()
    if t.n == 0 or k <= 0:
        return
    stack.clear()
    stack.push_back(Hit(0.0, 0))
    while stack.size() > 0:
        bound = stack.back().first
        node = stack.back().second
        stack.pop_back()
        if <int64_t>best.size() == k and bound > best.back().first:
            continue
        if t.left[node] < 0:
            for j in range(t.start[node], t.end[node]):
                i = t.perm[j]
                dx = t.pts[3 * i] - q[0]
                dy = t.pts[3 * i + 1] - q[1]
                dz = t.pts[3 * i + 2] - q[2]
                dist = sqrt(dx * dx + dy * dy + dz * dz)
                h = Hit(dist, i)
                if <int64_t>best.size() == k:
                    if not _less(h, best.back()):
                        continue
                    best.pop_back()
                best.push_back(h)
                i = <int64_t>best.size() - 1
                while i > 0 and _less(h, best[i - 1]):
                    best[i] = best[i - 1]
                    i -= 1
                best[i] = h
        else:
            d = t.dim[node]
            delta = q[d] - t.split[node]
            if delta <= 0.0:
                stack.push_back(Hit(fabs(delta), t.right[node]))
                stack.push_back(Hit(bound, t.left[node]))
            else:
                stack.push_back(Hit(fabs(delta), t.left[node]))
                stack.push_back(Hit(bound, t.right[node]))


def radius_batch(tree, queries, radii):
    """CSR neighbor lists: ``(offsets, indices, distances)``, rows sorted by (distance, index)."""
    cdef _Tree tr = _Tree(tree)
    cdef const double[:, ::1] qv = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    cdef const double[::1] rv = np.ascontiguousarray(radii, dtype=np.float64).reshape(-1)
    cdef Py_ssize_t nq = qv.shape[0], a, j
    cdef vector[Hit] hits
    cdef vector[int64_t] stack
    cdef vector[int64_t] idx
    cdef vector[double] dist
    offsets = np.zeros(nq + 1, dtype=np.int64)
    cdef int64_t[::1] off = offsets
    with nogil:
        for a in range(nq):
            _radius_query(&tr.view, &qv[a, 0], rv[a], hits, stack)
            for j in range(<Py_ssize_t>hits.size()):
                dist.push_back(hits[j].first)
                idx.push_back(hits[j].second)
            off[a + 1] = <int64_t>idx.size()
    out_i = np.empty(idx.size(), dtype=np.int64)
    out_d = np.empty(dist.size(), dtype=np.float64)
    cdef int64_t[::1] oi = out_i
    cdef double[::1] od = out_d
    for j in range(<Py_ssize_t>idx.size()):
        oi[j] = idx[j]
        od[j] = dist[j]
    return offsets, out_i, out_d


def radius_count(tree, queries, double radius):
    cdef _Tree tr = _Tree(tree)
    cdef const double[:, ::1] qv = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t nq = qv.shape[0], a
    cdef vector[Hit] hits
    cdef vector[int64_t] stack
    counts = np.zeros(nq, dtype=np.int64)
    cdef int64_t[::1] cv = counts
    with nogil:
        for a in range(nq):
            _radius_query(&tr.view, &qv[a, 0], radius, hits, stack)
            cv[a] = <int64_t>hits.size()
    return counts


def knn_batch(tree, queries, int64_t k):
    """The ``min(k, N)`` nearest points per query as ``(indices, distances)`` matrices."""
    cdef _Tree tr = _Tree(tree)
    cdef const double[:, ::1] qv = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t nq = qv.shape[0], a, j
    cdef int64_t kk = min(k, tr.view.n)
    cdef vector[Hit] best
    cdef vector[Hit] stack
    out_i = np.zeros((nq, kk), dtype=np.int64)
    out_d = np.zeros((nq, kk), dtype=np.float64)
    cdef int64_t[:, ::1] oi = out_i
    cdef double[:, ::1] od = out_d
    if kk == 0:
        return out_i, out_d
    with nogil:
        for a in range(nq):
            _knn_query(&tr.view, &qv[a, 0], kk, best, stack)
            for j in range(kk):
                od[a, j] = best[j].first
                oi[a, j] = best[j].second
    return out_i, out_d


cdef inline void _cross(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline double _dot(const double* a, const double* b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


cdef inline int64_t _bin(double x, double lo, double hi, int64_t bins) noexcept nogil:
    cdef double b = floor(((x - lo) / (hi - lo)) * bins)
    if b < 0:
        return 0
    if b > bins - 1:
        return bins - 1
    return <int64_t>b


cdef bint _pair_features(const double* ps, const double* ns, const double* pt,
                         const double* nt, double* feat) noexcept nogil:
    cdef double d[3]
    cdef double v[3]
    cdef double w[3]
    cdef double dn, a1, a2, vn
    cdef const double* u
    cdef const double* tn
    cdef int c
    for c in range(3):
        d[c] = pt[c] - ps[c]
    dn = sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
    if dn < COINCIDENT_EPS:
        return False
    for c in range(3):
        d[c] = d[c] / dn
    a1 = fabs(_dot(ns, d))
    a2 = fabs(_dot(nt, d))
    if a1 < a2:
        u = nt
        tn = ns
        for c in range(3):
            d[c] = -d[c]
    else:
        u = ns
        tn = nt
    _cross(u, d, v)
    vn = sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if vn < PARALLEL_EPS:
        return False
    for c in range(3):
        v[c] = v[c] / vn
    _cross(u, v, w)
    feat[0] = _dot(v, tn)
    feat[1] = _dot(u, d)
    feat[2] = atan2(_dot(w, tn), _dot(u, tn))
    if feat[2] <= -M_PI:
        feat[2] = M_PI
    return True


def spfh_batch(points, normals, centers, offsets, neighbors, int64_t bins):
    """Simplified point feature histograms for ``centers`` (see ``_fallback.spfh_batch``)."""
    cdef const double[:, ::1] pv = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] nv = np.ascontiguousarray(normals, dtype=np.float64).reshape(-1, 3)
    cdef const int64_t[::1] cv = np.ascontiguousarray(centers, dtype=np.int64)
    cdef const int64_t[::1] ov = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const int64_t[::1] qv = np.ascontiguousarray(neighbors, dtype=np.int64)
    cdef Py_ssize_t nc = cv.shape[0], a, j, c
    hist = np.zeros((nc, 3 * bins), dtype=np.float64)
    counts = np.zeros(nc, dtype=np.int64)
    cdef double[:, ::1] hv = hist
    cdef int64_t[::1] kv = counts
    cdef int64_t p, q, cnt
    cdef double feat[3]
    cdef double scale
    with nogil:
        for a in range(nc):
            p = cv[a]
            cnt = 0
            kv[a] = 0
            # a center without a normal has no frame
            if nv[p, 0] == 0.0 and nv[p, 1] == 0.0 and nv[p, 2] == 0.0:
                continue
            for j in range(ov[a], ov[a + 1]):
                q = qv[j]
                if q == p:
                    continue
                if nv[q, 0] == 0.0 and nv[q, 1] == 0.0 and nv[q, 2] == 0.0:
                    continue
                if not _pair_features(&pv[p, 0], &nv[p, 0], &pv[q, 0], &nv[q, 0], feat):
                    continue
                hv[a, _bin(feat[0], -1.0, 1.0, bins)] += 1.0
                hv[a, bins + _bin(feat[1], -1.0, 1.0, bins)] += 1.0
                hv[a, 2 * bins + _bin(feat[2], -M_PI, M_PI, bins)] += 1.0
                cnt += 1
            kv[a] = cnt
            if cnt > 0:
                scale = 100.0 / cnt
                for c in range(3 * bins):
                    hv[a, c] *= scale
    return hist, counts


cdef void _jacobi(double* a, double* v, int n) noexcept nogil:
    """Eigen-decomposition of a symmetric n x n row-major matrix in place.

    On return the diagonal of ``a`` holds eigenvalues and the columns of ``v``
    the eigenvectors.
    """
    cdef int i, j, p, q, sweep
    cdef double off, theta, t, c, s, tau, apq, app, aqq, api, aqi, vip, viq
    for i in range(n):
        for j in range(n):
            v[i * n + j] = 1.0 if i == j else 0.0
    for sweep in range(64):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += a[p * n + q] * a[p * n + q]
        if off == 0.0:
            return
        for p in range(n):
            for q in range(p + 1, n):
                apq = a[p * n + q]
                if apq == 0.0:
                    continue
                app = a[p * n + p]
                aqq = a[q * n + q]
                theta = (aqq - app) / (2.0 * apq)
                t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                tau = s / (1.0 + c)
                a[p * n + p] = app - t * apq
                a[q * n + q] = aqq + t * apq
                a[p * n + q] = 0.0
                a[q * n + p] = 0.0
                for i in range(n):
                    if i != p and i != q:
                        api = a[i * n + p]
                        aqi = a[i * n + q]
                        a[i * n + p] = api - s * (aqi + tau * api)
                        a[p * n + i] = a[i * n + p]
                        a[i * n + q] = aqi + s * (api - tau * aqi)
                        a[q * n + i] = a[i * n + q]
                for i in range(n):
                    vip = v[i * n + p]
                    viq = v[i * n + q]
                    v[i * n + p] = vip - s * (viq + tau * vip)
                    v[i * n + q] = viq + s * (vip - tau * viq)


cdef bint _fit_sample(const double* src, const double* tgt, const int64_t* ids, int s,
                      double* R, double* t) noexcept nogil:
    """Least-squares rotation for a small sample via the quaternion (Horn) form."""
    cdef double cs[3]
    cdef double ct[3]
    cdef double H[9]
    cdef double C[9]
    cdef double V3[9]
    cdef double N[16]
    cdef double V4[16]
    cdef double a[3]
    cdef double b[3]
    cdef double e0, e1, e2, smax, smid, tmp, qw, qx, qy, qz
    cdef int i, r, c, best
    for c in range(3):
        cs[c] = 0.0
        ct[c] = 0.0
    for i in range(s):
        for c in range(3):
            cs[c] += src[3 * ids[i] + c]
            ct[c] += tgt[3 * ids[i] + c]
    for c in range(3):
        cs[c] /= s
        ct[c] /= s
    for r in range(9):
        H[r] = 0.0
        C[r] = 0.0
    for i in range(s):
        for c in range(3):
            a[c] = src[3 * ids[i] + c] - cs[c]
            b[c] = tgt[3 * ids[i] + c] - ct[c]
        for r in range(3):
            for c in range(3):
                H[3 * r + c] += a[r] * b[c]
                C[3 * r + c] += a[r] * a[c]
    # collinearity: singular values of the centered source are sqrt(eig(C))
    _jacobi(C, V3, 3)
    e0 = sqrt(C[0] if C[0] > 0.0 else 0.0)
    e1 = sqrt(C[4] if C[4] > 0.0 else 0.0)
    e2 = sqrt(C[8] if C[8] > 0.0 else 0.0)
    if e0 < e1:
        e0, e1 = e1, e0
    if e1 < e2:
        e1, e2 = e2, e1
    if e0 < e1:
        e0, e1 = e1, e0
    if e0 == 0.0 or e1 <= COLLINEAR_TOLERANCE * e0:
        return False
    N[0] = H[0] + H[4] + H[8]
    N[1] = H[5] - H[7]
    N[2] = H[6] - H[2]
    N[3] = H[1] - H[3]
    N[5] = H[0] - H[4] - H[8]
    N[6] = H[1] + H[3]
    N[7] = H[6] + H[2]
    N[10] = -H[0] + H[4] - H[8]
    N[11] = H[5] + H[7]
    N[15] = -H[0] - H[4] + H[8]
    N[4] = N[1]
    N[8] = N[2]
    N[12] = N[3]
    N[9] = N[6]
    N[13] = N[7]
    N[14] = N[11]
    _jacobi(N, V4, 4)
    best = 0
    for i in range(1, 4):
        if N[5 * i] > N[5 * best]:
            best = i
    qw = V4[best]
    qx = V4[4 + best]
    qy = V4[8 + best]
    qz = V4[12 + best]
    tmp = sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    qw /= tmp
    qx /= tmp
    qy /= tmp
    qz /= tmp
    R[0] = qw * qw + qx * qx - qy * qy - qz * qz
    R[1] = 2.0 * (qx * qy - qw * qz)
    R[2] = 2.0 * (qx * qz + qw * qy)
    R[3] = 2.0 * (qx * qy + qw * qz)
    R[4] = qw * qw - qx * qx + qy * qy - qz * qz
    R[5] = 2.0 * (qy * qz - qw * qx)
    R[6] = 2.0 * (qx * qz - qw * qy)
    R[7] = 2.0 * (qy * qz + qw * qx)
    R[8] = qw * qw - qx * qx - qy * qy + qz * qz
    for r in range(3):
        t[r] = ct[r] - (R[3 * r] * cs[0] + R[3 * r + 1] * cs[1] + R[3 * r + 2] * cs[2])
    return True


cdef inline double _edge(const double* pts, int64_t i, int64_t j) noexcept nogil:
    cdef double dx = pts[3 * i] - pts[3 * j]
    cdef double dy = pts[3 * i + 1] - pts[3 * j + 1]
    cdef double dz = pts[3 * i + 2] - pts[3 * j + 2]
    return sqrt(dx * dx + dy * dy + dz * dz)


cdef inline bint _confident(int64_t best_count, int64_t m, int s, int64_t n_done,
                            double confidence) noexcept nogil:
    cdef double p
    if best_count <= 0:
        return False
    p = pow(<double>best_count / <double>m, s)
    if p >= 1.0:
        return True
    return n_done * log1p(-p) <= log(1.0 - confidence)


def ransac_block(src, tgt, samples, double threshold, double edge_ratio, int64_t n_done,
                 int64_t max_iterations, double confidence, int64_t best_count,
                 double best_rmse, int64_t best_iter, chunk=None):
    """Evaluate pre-drawn minimal samples sequentially (see ``_fallback.ransac_block``)."""
    cdef const double[:, ::1] sv = np.ascontiguousarray(src, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] tv = np.ascontiguousarray(tgt, dtype=np.float64).reshape(-1, 3)
    cdef const int64_t[:, ::1] smp = np.ascontiguousarray(samples, dtype=np.int64)
    cdef Py_ssize_t nb = smp.shape[0], b, i
    cdef int s = smp.shape[1], x, y
    cdef int64_t m = sv.shape[0], cnt
    cdef double R[9]
    cdef double t[3]
    cdef double px, py, pz, dx, dy, dz, d2, sse, rmse, es, et
    cdef bint ok
    cdef bint stopped = False
    cdef const double* sp = &sv[0, 0]
    cdef const double* tp = &tv[0, 0]
    with nogil:
        for b in range(nb):
            if n_done >= max_iterations:
                stopped = True
                break
            n_done += 1
            ok = True
            for x in range(s):
                for y in range(x + 1, s):
                    es = _edge(sp, smp[b, x], smp[b, y])
                    et = _edge(tp, smp[b, x], smp[b, y])
                    if es < et * edge_ratio or et < es * edge_ratio:
                        ok = False
            if ok:
                ok = _fit_sample(sp, tp, &smp[b, 0], s, R, t)
            if ok:
                cnt = 0
                sse = 0.0
                for i in range(m):
                    px = sv[i, 0]
                    py = sv[i, 1]
                    pz = sv[i, 2]
                    dx = R[0] * px + R[1] * py + R[2] * pz + t[0] - tv[i, 0]
                    dy = R[3] * px + R[4] * py + R[5] * pz + t[1] - tv[i, 1]
                    dz = R[6] * px + R[7] * py + R[8] * pz + t[2] - tv[i, 2]
                    d2 = dx * dx + dy * dy + dz * dz
                    if sqrt(d2) <= threshold:
                        cnt += 1
                        sse += d2
                if cnt > 0:
                    rmse = sqrt(sse / cnt)
                    if cnt > best_count or (cnt == best_count and rmse < best_rmse):
                        best_count = cnt
                        best_rmse = rmse
                        best_iter = n_done - 1
            if _confident(best_count, m, s, n_done, confidence):
                stopped = True
                break
    if n_done >= max_iterations:
        stopped = True
    return best_count, best_rmse, best_iter, n_done, bool(stopped)
