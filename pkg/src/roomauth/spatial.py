"""Exact k-d tree neighbor queries over a fixed set of 3D points."""

from __future__ import annotations

from types import ModuleType
from typing import Union

import numpy as np
from numpy.typing import ArrayLike

from . import _backend
from ._kdtree import TreeArrays
from .geometry import PointCloud


class SpatialIndex:
    """Immutable median-split k-d tree; query results are identical to a brute-force scan.

    Results are sorted by distance, ties broken by ascending point index.
    """

    def __init__(self, points: ArrayLike, backend: str | None = None) -> None:
        self.kernels: ModuleType = _backend.get(backend)
        self.tree: TreeArrays = self.kernels.build_tree(
            np.asarray(points, dtype=np.float64).reshape(-1, 3))

    @property
    def points(self) -> np.ndarray:
        return self.tree.points

    def __len__(self) -> int:
        return len(self.tree.points)

    def radius_batch(self, queries: ArrayLike, radius: Union[float, ArrayLike]):
        """CSR ``(offsets, indices, distances)`` for many queries."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        r = np.broadcast_to(np.asarray(radius, dtype=np.float64), (len(q),))
        if np.any(r <= 0):
            raise ValueError("radius must be positive")
        return self.kernels.radius_batch(self.tree, q, np.ascontiguousarray(r))

    def radius_count(self, queries: ArrayLike, radius: float) -> np.ndarray:
        if radius <= 0:
            raise ValueError("radius must be positive")
        return self.kernels.radius_count(self.tree, np.asarray(queries, dtype=np.float64), float(radius))

    def knn_batch(self, queries: ArrayLike, k: int):
        if k < 1:
            raise ValueError("k must be at least 1")
        return self.kernels.knn_batch(self.tree, np.asarray(queries, dtype=np.float64), int(k))


def build_index(cloud: Union[PointCloud, ArrayLike], backend: str | None = None) -> SpatialIndex:
    points = cloud.points if isinstance(cloud, PointCloud) else cloud
    return SpatialIndex(points, backend)


def radius_search(index: SpatialIndex, center: ArrayLike, radius: float) -> list[tuple[int, float]]:
    _, idx, dist = index.radius_batch(np.asarray(center, dtype=np.float64).reshape(1, 3), radius)
    return list(zip(idx.tolist(), dist.tolist()))


def knn_search(index: SpatialIndex, center: ArrayLike, k: int) -> list[tuple[int, float]]:
    idx, dist = index.knn_batch(np.asarray(center, dtype=np.float64).reshape(1, 3), k)
    return list(zip(idx[0].tolist(), dist[0].tolist()))


def csr_rows(offsets: np.ndarray) -> np.ndarray:
    """Row id of every entry of a CSR neighbor list."""
    return np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))
