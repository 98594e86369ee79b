"""Intrinsic Shape Signatures keypoint detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyCloudError
from .geometry import PointCloud
from .preprocess import neighborhood_covariances
from .spatial import SpatialIndex, build_index, csr_rows


@dataclass(frozen=True)
class IssParams:
    salient_radius: float = 0.2
    non_max_radius: float = 0.2
    gamma_21: float = 0.95
    gamma_32: float = 0.95
    min_neighbors: int = 5

    def __post_init__(self) -> None:
        if not (self.salient_radius > 0 and self.non_max_radius > 0):
            raise ValueError("radii must be positive")
        if not (0 < self.gamma_21 <= 1 and 0 < self.gamma_32 <= 1):
            raise ValueError("eigenvalue ratio thresholds must lie in (0, 1]")
        if self.min_neighbors < 1:
            raise ValueError("min_neighbors must be >= 1")


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """Keypoints as indices into their source cloud, sorted by descending saliency."""

    indices: np.ndarray
    positions: np.ndarray
    saliency: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    @classmethod
    def from_indices(cls, cloud: PointCloud, indices, saliency=None) -> "KeypointSet":
        indices = np.asarray(indices, dtype=np.int64)
        sal = np.zeros(len(indices)) if saliency is None else np.asarray(saliency, dtype=np.float64)
        return cls(indices, cloud.points[indices], sal)


def local_covariance(cloud: PointCloud, index: SpatialIndex, center_idx: int,
                     radius: float) -> tuple[np.ndarray, int]:
    """Population covariance of the points within ``radius`` of a cloud point.

    Returns the 3x3 matrix and the neighbor count, the center itself excluded.
    """
    offsets, nbr, _ = index.radius_batch(cloud.points[center_idx], radius)
    cov = neighborhood_covariances(cloud.points, offsets, nbr)[0]
    return cov, len(nbr) - 1


def eigenvalues_descending(cov: np.ndarray) -> np.ndarray:
    """Eigenvalues of (batched) symmetric 3x3 matrices, largest first, clamped at zero."""
    ev = np.linalg.eigvalsh(cov)[..., ::-1]
    return np.maximum(ev, 0.0)


def salient_mask(eigvals: np.ndarray, counts: np.ndarray, params: IssParams) -> np.ndarray:
    """Candidacy test; zero denominators fail it."""
    l1, l2, l3 = eigvals[..., 0], eigvals[..., 1], eigvals[..., 2]
    ok = (counts >= params.min_neighbors) & (l1 > 0) & (l2 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ok &= (l2 / np.where(l1 > 0, l1, 1.0)) < params.gamma_21
        ok &= (l3 / np.where(l2 > 0, l2, 1.0)) < params.gamma_32
    return ok


def non_max_suppression(positions: np.ndarray, saliency: np.ndarray, ids: np.ndarray,
                        radius: float) -> np.ndarray:
    """Mask of candidates that beat every other candidate within ``radius``.

    Equal saliency goes to the lower point id.
    """
    if len(positions) == 0:
        return np.zeros(0, dtype=bool)
    index = build_index(positions)
    # a survivor must also win inside any smaller ball, so cheap small-radius
    # passes remove most candidates before the full-radius check
    keep = np.ones(len(positions), dtype=bool)
    for scale in (0.25, 0.5, 1.0):
        alive = np.nonzero(keep)[0]
        keep[alive] = _beats_neighbors(index, alive, saliency, ids, scale * radius)
    return keep


def _beats_neighbors(index: SpatialIndex, query: np.ndarray, saliency: np.ndarray,
                     ids: np.ndarray, radius: float) -> np.ndarray:
    offsets, nbr, _ = index.radius_batch(index.points[query], radius)
    row = query[csr_rows(offsets)]
    other = nbr != row
    r, n = row[other], nbr[other]
    loses = (saliency[n] > saliency[r]) | ((saliency[n] == saliency[r]) & (ids[n] < ids[r]))
    keep = np.ones(len(saliency), dtype=bool)
    keep[r[loses]] = False
    return keep[query]


def extract_iss_keypoints(cloud: PointCloud, params: IssParams = IssParams(),
                          index: SpatialIndex | None = None) -> KeypointSet:
    if len(cloud) == 0:
        raise EmptyCloudError("cannot detect keypoints in an empty cloud")
    index = index or build_index(cloud)
    offsets, nbr, _ = index.radius_batch(cloud.points, params.salient_radius)
    counts = np.diff(offsets) - 1
    eig = eigenvalues_descending(neighborhood_covariances(cloud.points, offsets, nbr))
    cand = np.nonzero(salient_mask(eig, counts, params))[0]
    sal = eig[cand, 2]
    keep = non_max_suppression(cloud.points[cand], sal, cand, params.non_max_radius)
    cand, sal = cand[keep], sal[keep]
    order = np.lexsort((cand, -sal))
    return KeypointSet(cand[order], cloud.points[cand[order]], sal[order])
