"""Point clouds, rigid transforms and the least-squares rigid fit."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DegenerateConfigurationError

NORMAL_TOLERANCE = 1e-6
# relative size of the second singular value below which a point set is collinear
COLLINEAR_TOLERANCE = 1e-9
ROTATION_TOLERANCE = 1e-9


def _frozen(a: NDArray) -> NDArray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.flags.writeable:
        a = a.copy()
        a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An (N, 3) array of points in meters with optional per-point normals.

    A normal equal to the zero vector marks a point whose normal could not be
    estimated; :attr:`valid_normals` exposes the mask. Arrays are read-only.
    """

    points: NDArray[np.float64]
    normals: Optional[NDArray[np.float64]] = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        object.__setattr__(self, "points", _frozen(pts))
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64)
            if nrm.size == 0:
                nrm = nrm.reshape(0, 3)
            if nrm.shape != pts.shape:
                raise ValueError("normals must have the same shape as points")
            lengths = np.linalg.norm(nrm, axis=1)
            ok = (np.abs(lengths - 1.0) <= NORMAL_TOLERANCE) | (lengths == 0.0)
            if not np.all(ok):
                raise ValueError("normals must be unit length (or zero for invalid)")
            object.__setattr__(self, "normals", _frozen(nrm))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    @property
    def valid_normals(self) -> NDArray[np.bool_]:
        if self.normals is None:
            return np.zeros(len(self), dtype=bool)
        return np.any(self.normals != 0.0, axis=1)

    def select(self, which: ArrayLike) -> "PointCloud":
        """Subset by boolean mask or index array, keeping order."""
        which = np.asarray(which)
        normals = None if self.normals is None else self.normals[which]
        return PointCloud(self.points[which], normals)

    def with_normals(self, normals: Optional[NDArray]) -> "PointCloud":
        return PointCloud(self.points, normals)

    def equals(self, other: "PointCloud") -> bool:
        """Exact element-wise equality, normals included."""
        if not np.array_equal(self.points, other.points):
            return False
        if (self.normals is None) != (other.normals is None):
            return False
        return self.normals is None or np.array_equal(self.normals, other.normals)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rotation followed by a translation: ``p -> R @ p + t``."""

    rotation: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))
    translation: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("transform entries must be finite")
        if not (np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=ROTATION_TOLERANCE)
                and abs(np.linalg.det(r) - 1.0) <= ROTATION_TOLERANCE):
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: ArrayLike) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_axis_angle(cls, axis: ArrayLike, angle: float,
                        translation: ArrayLike = (0.0, 0.0, 0.0)) -> "RigidTransform":
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        k = np.array([[0.0, -axis[2], axis[1]],
                      [axis[2], 0.0, -axis[0]],
                      [-axis[1], axis[0], 0.0]])
        r = np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)
        return cls(r, translation)

    def as_matrix(self) -> NDArray[np.float64]:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: ArrayLike) -> NDArray[np.float64]:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation))

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.rotation, np.eye(3))
                    and not np.any(self.translation))

    def rotation_angle(self) -> float:
        """Rotation magnitude in radians."""
        r = self.rotation
        # atan2 of the skew part against the trace stays accurate near 0 and pi
        s = 0.5 * np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
        return float(np.arctan2(s, (np.trace(r) - 1.0) / 2.0))

    def is_proper(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return bool(np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=tol)
                    and abs(np.linalg.det(r) - 1.0) <= tol)


def compose(second: RigidTransform, first: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``first`` and then ``second``."""
    return RigidTransform(second.rotation @ first.rotation,
                          second.rotation @ first.translation + second.translation)


def apply_transform(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    if t.is_identity():
        return cloud
    normals = None
    if cloud.normals is not None:
        normals = cloud.normals @ t.rotation.T
        # keep invalid-normal sentinels exactly zero and valid ones exactly unit
        valid = cloud.valid_normals
        normals[valid] /= np.linalg.norm(normals[valid], axis=1, keepdims=True)
    return PointCloud(t.apply(cloud.points), normals)


def transform_error(estimate: RigidTransform, truth: RigidTransform) -> tuple[float, float]:
    """Rotation error in degrees and translation error in meters."""
    rel = estimate.rotation @ truth.rotation.T
    ang = RigidTransform(rel).rotation_angle()
    return float(np.degrees(ang)), float(np.linalg.norm(estimate.translation - truth.translation))


def estimate_rigid_transform(source: ArrayLike, target: ArrayLike) -> RigidTransform:
    """Least-squares rotation and translation mapping ``source[i]`` onto ``target[i]``.

    SVD of the cross-covariance (Kabsch), with the last singular vector
    flipped when needed so the result is never a reflection.
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError("source and target must have the same length")
    if len(src) < 3:
        raise DegenerateConfigurationError(f"need at least 3 correspondences, got {len(src)}")
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    a = src - cs
    b = dst - cd
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] == 0.0 or sv[1] <= COLLINEAR_TOLERANCE * sv[0]:
        raise DegenerateConfigurationError("source points are collinear")
    u, _, vt = np.linalg.svd(a.T @ b)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0.0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(r, cd - r @ cs)
