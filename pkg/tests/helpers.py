"""Shared builders and brute-force oracles for the test suite."""

import math
from collections import defaultdict
from fractions import Fraction

import numpy as np

from roomauth.geometry import PointCloud, RigidTransform


def random_rotation(rng):
    # QR of a Gaussian matrix with a sign fix gives a uniform rotation
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_transform(rng, scale=5.0):
    return RigidTransform(random_rotation(rng), rng.uniform(-scale, scale, 3))


def plane_grid(n=21, step=0.1):
    g = np.arange(n) * step
    x, y = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([x.ravel(), y.ravel(), np.zeros(x.size)])


def corner_patch(size=0.6, step=0.05):
    """Three orthogonal square faces meeting at the origin, no duplicate points."""
    g = np.arange(0.0, size + 1e-9, step)
    a, b = (m.ravel() for m in np.meshgrid(g, g, indexing="ij"))
    z = np.zeros_like(a)
    pts = np.vstack([np.column_stack([a, b, z]), np.column_stack([a, z, b]),
                     np.column_stack([z, a, b])])
    return np.unique(pts, axis=0)


def hash_centroids(points, size):
    """Dictionary-of-cells oracle, output sorted by cell key."""
    origin = points.min(axis=0)
    cells = defaultdict(list)
    for p in points:
        cells[tuple(int(v) for v in np.floor((p - origin) / size))].append(p)
    keys = sorted(cells)
    return keys, np.array([np.mean(cells[k], axis=0) for k in keys])


def sweep_eer(gen, imp):
    """Exhaustive threshold sweep with plain loops."""
    best = None
    for t in sorted(set(gen) | set(imp)) + [math.inf]:
        frr = Fraction(sum(g < t for g in gen), len(gen))
        far = Fraction(sum(i >= t for i in imp), len(imp))
        key = (abs(frr - far), t)
        if best is None or key < best[0]:
            best = (key, float((frr + far) / 2), t)
    return best[1], best[2]


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def two_planes(rng, n=400):
    """Random points on the floor and a wall meeting along the x axis, with exact normals."""
    a = np.column_stack([rng.uniform(-0.4, 0.4, n), rng.uniform(0.0, 0.4, n), np.zeros(n)])
    b = np.column_stack([rng.uniform(-0.4, 0.4, n), np.zeros(n), rng.uniform(0.003, 0.4, n)])
    na = np.tile([0.0, 0.0, 1.0], (n, 1))
    nb = np.tile([0.0, 1.0, 0.0], (n, 1))
    return PointCloud(np.vstack([a, b]), np.vstack([na, nb]))


def brute_radius(points, q, r):
    d = np.sqrt(((points - q) ** 2).sum(axis=1))
    idx = np.nonzero(d <= r)[0]
    return idx[np.lexsort((idx, d[idx]))]


def brute_knn(points, q, k):
    d = np.sqrt(((points - q) ** 2).sum(axis=1))
    return np.lexsort((np.arange(len(points)), d))[:k]
