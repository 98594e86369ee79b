"""Scan clean-up: voxel downsampling, PCA normals and radius outlier removal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import EmptyCloudError, InsufficientStructureError
from .geometry import PointCloud
from .spatial import SpatialIndex, build_index

MIN_PREPROCESSED_POINTS = 10
# averaged normals shorter than this are treated as cancelled out
_NORMAL_CANCEL = 1e-6
_ORIENT_TIE = 1e-12


@dataclass(frozen=True)
class PreprocessParams:
    voxel_size: float = 0.1
    normal_neighbors: int = 30
    normal_radius: float = 0.3
    outlier_radius: float = 0.3
    outlier_min_neighbors: int = 3

    def __post_init__(self) -> None:
        if not (self.voxel_size > 0 and self.normal_radius > 0 and self.outlier_radius > 0):
            raise ValueError("voxel size and radii must be positive")
        if self.normal_neighbors < 1 or self.outlier_min_neighbors < 0:
            raise ValueError("normal_neighbors must be >= 1 and outlier_min_neighbors >= 0")


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """One centroid per occupied voxel, voxels anchored at the cloud's minimum corner.

    Output is ordered by voxel index (x-major). Points are summed in a canonical
    order so shuffling the input gives a bitwise-identical result.
    """
    if not voxel_size > 0:
        raise ValueError("voxel_size must be positive")
    if len(cloud) == 0:
        return cloud
    pts = cloud.points
    cells = np.floor((pts - pts.min(axis=0)) / voxel_size).astype(np.int64)
    ext = cells.max(axis=0) + 1
    keys = (cells[:, 0] * ext[1] + cells[:, 1]) * ext[2] + cells[:, 2]
    order = _backend.kernels.voxel_order(keys, pts)
    keys = keys[order]
    new_cell = np.ones(len(keys), dtype=bool)
    new_cell[1:] = keys[1:] != keys[:-1]
    starts = np.nonzero(new_cell)[0]
    counts = np.diff(np.append(starts, len(keys)))
    centroids = np.add.reduceat(pts[order], starts, axis=0) / counts[:, None]
    normals = None
    if cloud.normals is not None:
        summed = np.add.reduceat(cloud.normals[order], starts, axis=0)
        length = np.linalg.norm(summed, axis=1)
        ok = length / counts > _NORMAL_CANCEL
        normals = np.zeros_like(summed)
        normals[ok] = summed[ok] / length[ok, None]
    return PointCloud(centroids, normals)


def _orient(normals: np.ndarray) -> np.ndarray:
    """Flip into the +z hemisphere; ties on z fall back to +y, then +x."""
    x, y, z = normals[:, 0], normals[:, 1], normals[:, 2]
    # eigenvector components at round-off level count as ties
    zt, yt = np.abs(z) <= _ORIENT_TIE, np.abs(y) <= _ORIENT_TIE
    flip = (~zt & (z < 0)) | (zt & ~yt & (y < 0)) | (zt & yt & (x < 0))
    out = normals.copy()
    out[flip] *= -1.0
    return out


def neighborhood_covariances(points: np.ndarray, offsets: np.ndarray,
                             neighbors: np.ndarray, backend: str | None = None) -> np.ndarray:
    """Population covariance of every CSR neighborhood, shape (n, 3, 3)."""
    return _backend.get(backend).csr_covariances(
        np.ascontiguousarray(points, dtype=np.float64), np.asarray(offsets, dtype=np.int64),
        np.asarray(neighbors, dtype=np.int64))


def estimate_normals(cloud: PointCloud, params: PreprocessParams = PreprocessParams(),
                     index: SpatialIndex | None = None) -> PointCloud:
    """PCA normals from up to ``normal_neighbors`` points within ``normal_radius``.

    Neighborhoods with fewer than three points (the point itself included) get
    the zero-vector sentinel and show up as False in ``valid_normals``.
    """
    return _normals_and_knn(cloud, params, index)[0]


def _normals_and_knn(cloud: PointCloud, params: PreprocessParams,
                     index: SpatialIndex | None) -> tuple[PointCloud, np.ndarray]:
    if len(cloud) == 0:
        raise EmptyCloudError("cannot estimate normals of an empty cloud")
    index = index or build_index(cloud)
    idx, dist = index.knn_batch(cloud.points, params.normal_neighbors)
    inside = dist <= params.normal_radius
    counts = inside.sum(axis=1)
    # knn rows are distance-sorted, so in-radius entries form a prefix
    offsets = np.zeros(len(cloud) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    cov = neighborhood_covariances(cloud.points, offsets, idx[inside])
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    normals = _orient(normals)
    normals[counts < 3] = 0.0
    return cloud.with_normals(normals), dist


def radius_outlier_removal(cloud: PointCloud, radius: float, min_neighbors: int,
                           index: SpatialIndex | None = None) -> PointCloud:
    """Keep points with at least ``min_neighbors`` other points within ``radius``."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    if min_neighbors <= 0 or len(cloud) == 0:
        return cloud
    index = index or build_index(cloud)
    others = index.radius_count(cloud.points, radius) - 1
    return cloud.select(others >= min_neighbors)


def preprocess(cloud: PointCloud, params: PreprocessParams = PreprocessParams()) -> PointCloud:
    """Downsample, estimate normals, drop outliers; every retained point has a valid normal."""
    if len(cloud) == 0:
        raise EmptyCloudError("cannot preprocess an empty cloud")
    down = voxel_downsample(cloud, params.voxel_size)
    index = build_index(down)
    with_normals, knn_dist = _normals_and_knn(down, params, index)
    m = params.outlier_min_neighbors
    if 0 < m < knn_dist.shape[1]:
        # the m-th neighbor besides the point itself decides the radius count
        kept = with_normals.select(knn_dist[:, m] <= params.outlier_radius)
    else:
        kept = radius_outlier_removal(with_normals, params.outlier_radius, m, index)
    kept = kept.select(kept.valid_normals)
    if len(kept) < MIN_PREPROCESSED_POINTS:
        raise InsufficientStructureError(
            f"only {len(kept)} points survive preprocessing (need {MIN_PREPROCESSED_POINTS})")
    return kept
