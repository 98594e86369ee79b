"""Fast Point Feature Histogram descriptors."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike

from .errors import IsolatedKeypointError
from .geometry import PointCloud
from .iss import KeypointSet
from .spatial import SpatialIndex, csr_rows

log = logging.getLogger(__name__)

COINCIDENT_EPS = 1e-9
PARALLEL_EPS = 1e-6


@dataclass(frozen=True)
class FpfhParams:
    feature_radius: float = 0.25
    bins_per_feature: int = 11

    def __post_init__(self) -> None:
        if not self.feature_radius > 0:
            raise ValueError("feature_radius must be positive")
        if self.bins_per_feature < 2:
            raise ValueError("bins_per_feature must be >= 2")

    @property
    def dimension(self) -> int:
        return 3 * self.bins_per_feature


@dataclass(frozen=True, eq=False)
class DescriptorSet:
    """Descriptors for the keypoints that had a usable neighborhood.

    ``kept`` indexes the input keypoint list; ``descriptors[i]`` belongs to
    keypoint ``kept[i]``.
    """

    descriptors: np.ndarray
    kept: np.ndarray
    dropped: int

    def __len__(self) -> int:
        return len(self.descriptors)


def pair_features(ps: ArrayLike, ns: ArrayLike, pt: ArrayLike,
                  nt: ArrayLike) -> Optional[tuple[float, float, float]]:
    """Darboux-frame angle triple ``(alpha, phi, theta)`` for a source/target pair.

    Roles are taken as given. Raises ``ValueError`` for coincident points and
    returns ``None`` when the source normal is parallel to the displacement.
    """
    ps, ns, pt, nt = (np.asarray(a, dtype=np.float64) for a in (ps, ns, pt, nt))
    d = pt - ps
    dn = float(np.sqrt(d @ d))
    if dn < COINCIDENT_EPS:
        raise ValueError("coincident points have no pair feature")
    d = d / dn
    u = ns
    v = np.cross(u, d)
    vn = float(np.sqrt(v @ v))
    if vn < PARALLEL_EPS:
        return None
    v = v / vn
    w = np.cross(u, v)
    theta = float(np.arctan2(w @ nt, u @ nt))
    if theta <= -np.pi:
        theta = float(np.pi)
    return float(v @ nt), float(u @ d), theta


def _spfh_rows(cloud: PointCloud, index: SpatialIndex, centers: np.ndarray,
               params: FpfhParams) -> tuple[np.ndarray, np.ndarray]:
    offsets, nbr, _ = index.radius_batch(cloud.points[centers], params.feature_radius)
    return index.kernels.spfh_batch(cloud.points, cloud.normals, centers, offsets, nbr,
                                    params.bins_per_feature)


def compute_spfh(cloud: PointCloud, index: SpatialIndex, center_idx: int,
                 params: FpfhParams = FpfhParams()) -> np.ndarray:
    if not cloud.has_normals or not cloud.valid_normals[center_idx]:
        raise ValueError("center point has no valid normal")
    hist, counts = _spfh_rows(cloud, index, np.array([center_idx], dtype=np.int64), params)
    if counts[0] == 0:
        raise IsolatedKeypointError(f"point {center_idx} has no usable neighbor")
    return hist[0]


def _renormalize(hist: np.ndarray, bins: int) -> np.ndarray:
    parts = hist.reshape(len(hist), 3, bins)
    sums = parts.sum(axis=2, keepdims=True)
    parts = np.divide(parts * 100.0, sums, out=np.zeros_like(parts), where=sums > 0)
    return parts.reshape(len(hist), 3 * bins)


def compute_fpfh(cloud: PointCloud, index: SpatialIndex, keypoints: KeypointSet | ArrayLike,
                 params: FpfhParams = FpfhParams()) -> DescriptorSet:
    """FPFH of each keypoint, with neighbor histograms taken from the full cloud.

    Keypoints without any usable neighbor are dropped and counted.
    """
    if not cloud.has_normals:
        raise ValueError("FPFH needs a cloud with normals")
    kp = np.asarray(keypoints.indices if isinstance(keypoints, KeypointSet) else keypoints,
                    dtype=np.int64)
    bins = params.bins_per_feature
    if len(kp) == 0:
        return DescriptorSet(np.zeros((0, 3 * bins)), np.zeros(0, dtype=np.int64), 0)

    offsets, nbr, dist = index.radius_batch(cloud.points[kp], params.feature_radius)
    row = csr_rows(offsets)
    valid = cloud.valid_normals
    use = (nbr != kp[row]) & (dist > 0.0) & valid[nbr]

    needed = np.unique(np.concatenate([kp, nbr[use]]))
    spfh, counts = _spfh_rows(cloud, index, needed, params)
    kp_rows = np.searchsorted(needed, kp)
    nbr_rows = np.searchsorted(needed, nbr)

    weights = np.where(use, 1.0 / np.where(dist > 0, dist, 1.0), 0.0)
    contrib = spfh[nbr_rows] * weights[:, None]
    k = np.bincount(row, weights=use.astype(np.float64), minlength=len(kp))
    summed = np.zeros((len(kp), 3 * bins))
    nonempty = np.diff(offsets) > 0
    if len(contrib):
        summed[nonempty] = np.add.reduceat(contrib, offsets[:-1][nonempty], axis=0)
    fpfh = spfh[kp_rows] + summed / np.where(k > 0, k, 1.0)[:, None]

    ok = (counts[kp_rows] > 0) & valid[kp]
    dropped = int((~ok).sum())
    if dropped:
        log.warning("dropped %d isolated keypoint(s) without usable neighbors", dropped)
    return DescriptorSet(_renormalize(fpfh[ok], bins), np.nonzero(ok)[0], dropped)
