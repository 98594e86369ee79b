"""Descriptor matching, RANSAC coarse alignment and point-to-point ICP."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from numpy.typing import ArrayLike

from . import _backend
from .errors import DegenerateConfigurationError
from .geometry import PointCloud, RigidTransform, estimate_rigid_transform
from .iss import KeypointSet
from .spatial import build_index

# RANSAC draws samples in blocks of growing size; a fixed schedule keeps runs reproducible
_FIRST_BLOCK = 256
_MAX_BLOCK = 65536
_MATCH_CHUNK = 1024


@dataclass(frozen=True)
class RansacParams:
    correspondence_distance: float = 0.2
    max_iterations: int = 1_000_000
    confidence: float = 0.999
    sample_size: int = 3
    similarity_edge_ratio: float = 0.9
    rng_seed: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        if self.sample_size < 3:
            raise ValueError("sample_size must be >= 3")
        if not self.correspondence_distance > 0:
            raise ValueError("correspondence_distance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.similarity_edge_ratio <= 1:
            raise ValueError("similarity_edge_ratio must lie in (0, 1]")


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    distance_threshold: float = 0.2
    convergence_epsilon: float = 1e-6

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.distance_threshold > 0:
            raise ValueError("distance_threshold must be positive")


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    """Outcome of a registration stage.

    ``failure`` is None on success and a short reason otherwise. ``history``
    holds per-iteration ICP rmse before and after each refit.
    """

    transform: RigidTransform
    inlier_count: int
    fitness: float
    rmse: float
    converged: bool
    iterations_used: int
    failure: Optional[str] = None
    history: tuple = field(default=())

    @property
    def failed(self) -> bool:
        return self.failure is not None

    def same_as(self, other: "RegistrationResult") -> bool:
        """Bitwise equality of every field."""
        return (np.array_equal(self.transform.rotation, other.transform.rotation)
                and np.array_equal(self.transform.translation, other.transform.translation)
                and (self.inlier_count, self.fitness, self.rmse, self.converged,
                     self.iterations_used, self.failure, self.history)
                == (other.inlier_count, other.fitness, other.rmse, other.converged,
                    other.iterations_used, other.failure, other.history))


def _failed(reason: str, iterations: int = 0,
            initial: RigidTransform | None = None) -> RegistrationResult:
    return RegistrationResult(initial or RigidTransform.identity(), 0, 0.0, 0.0, False,
                              iterations, reason)


def _positions(x: Union[KeypointSet, PointCloud, ArrayLike]) -> np.ndarray:
    if isinstance(x, (KeypointSet, PointCloud)):
        x = x.positions if isinstance(x, KeypointSet) else x.points
    return np.asarray(x, dtype=np.float64).reshape(-1, 3)


def match_descriptors(source_desc: ArrayLike, target_desc: ArrayLike) -> np.ndarray:
    """Mutual nearest neighbors in descriptor space as an (n, 2) array of (source, target).

    Distance ties resolve to the lower index. Rows are ordered by source index.
    """
    a = np.asarray(source_desc, dtype=np.float64)
    b = np.asarray(target_desc, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("descriptor lists must be non-empty")
    bb = np.einsum("ij,ij->i", b, b)
    aa = np.einsum("ij,ij->i", a, a)
    fwd = np.empty(len(a), dtype=np.int64)
    col_best = np.full(len(b), np.inf)
    col_arg = np.zeros(len(b), dtype=np.int64)
    for lo in range(0, len(a), _MATCH_CHUNK):
        blk = a[lo:lo + _MATCH_CHUNK]
        d2 = aa[lo:lo + _MATCH_CHUNK, None] + bb[None, :] - 2.0 * (blk @ b.T)
        fwd[lo:lo + len(blk)] = np.argmin(d2, axis=1)
        arg = np.argmin(d2, axis=0)
        val = d2[arg, np.arange(len(b))]
        better = val < col_best
        col_best[better] = val[better]
        col_arg[better] = arg[better] + lo
    src = np.arange(len(a))
    mutual = col_arg[fwd] == src
    return np.column_stack([src[mutual], fwd[mutual]]).astype(np.int64)


def content_seed(*arrays: np.ndarray) -> int:
    h = hashlib.sha256()
    for arr in arrays:
        h.update(np.ascontiguousarray(arr).tobytes())
    return int.from_bytes(h.digest()[:8], "little")


def draw_samples(rng: np.random.Generator, m: int, s: int, count: int) -> np.ndarray:
    """``count`` rows of ``s`` distinct indices in ``[0, m)``, uniform without replacement."""
    out = np.empty((count, s), dtype=np.int64)
    for j in range(s):
        r = rng.integers(0, m - j, size=count)
        # shift past the already chosen indices in ascending order
        for prev in np.sort(out[:, :j], axis=1).T:
            r += r >= prev
        out[:, j] = r
    return out


def _inliers(t: RigidTransform, src: np.ndarray, dst: np.ndarray, thr: float):
    d = t.apply(src) - dst
    d2 = np.einsum("ij,ij->i", d, d)
    mask = np.sqrt(d2) <= thr
    rmse = float(np.sqrt(d2[mask].mean())) if mask.any() else 0.0
    return mask, rmse


def ransac_register(source_kp, target_kp, correspondences: ArrayLike,
                    params: RansacParams = RansacParams(),
                    backend: str | None = None) -> RegistrationResult:
    """Rigid transform taking source keypoints onto target keypoints.

    Fitness is the inlier fraction of the correspondences.
    """
    corr = np.asarray(correspondences, dtype=np.int64).reshape(-1, 2)
    s = params.sample_size
    if len(corr) < s:
        raise DegenerateConfigurationError(
            f"need at least {s} correspondences, got {len(corr)}")
    src = np.ascontiguousarray(_positions(source_kp)[corr[:, 0]])
    dst = np.ascontiguousarray(_positions(target_kp)[corr[:, 1]])
    m = len(corr)
    seed = params.rng_seed if params.rng_seed is not None else content_seed(src, dst)
    rng = np.random.default_rng(seed)
    kernels = _backend.get(backend)

    best_count, best_rmse, best_iter, n_done = 0, np.inf, -1, 0
    best_sample = None
    block = _FIRST_BLOCK
    stopped = False
    while not stopped:
        samples = draw_samples(rng, m, s, block)
        prev_iter = best_iter
        base = n_done
        best_count, best_rmse, best_iter, n_done, stopped = kernels.ransac_block(
            src, dst, samples, params.correspondence_distance, params.similarity_edge_ratio,
            n_done, params.max_iterations, params.confidence, best_count, best_rmse, best_iter)
        if best_iter != prev_iter:
            best_sample = samples[best_iter - base]
        block = min(block * 2, _MAX_BLOCK)

    if best_sample is None or best_count < s:
        return _failed("registration failed: no model with enough inliers", n_done)
    try:
        model = estimate_rigid_transform(src[best_sample], dst[best_sample])
        mask, _ = _inliers(model, src, dst, params.correspondence_distance)
        model = estimate_rigid_transform(src[mask], dst[mask])
    except DegenerateConfigurationError:
        return _failed("registration failed: degenerate inlier set", n_done)
    mask, rmse = _inliers(model, src, dst, params.correspondence_distance)
    count = int(mask.sum())
    if count < s:
        return _failed("registration failed: refit lost its inliers", n_done)
    return RegistrationResult(model, count, count / m, rmse, True, n_done)


def icp_refine(source, target, initial: RigidTransform = RigidTransform.identity(),
               params: IcpParams = IcpParams(), backend: str | None = None) -> RegistrationResult:
    """Point-to-point ICP. The returned transform includes ``initial``."""
    src = _positions(source)
    dst = _positions(target)
    if len(src) == 0 or len(dst) == 0:
        raise ValueError("ICP needs non-empty source and target")
    index = build_index(dst, backend)
    thr = params.distance_threshold
    current = initial
    prev_rmse = None
    history = []
    converged = False
    it = 0
    for it in range(1, params.max_iterations + 1):
        moved = current.apply(src)
        nn, dist = index.knn_batch(moved, 1)
        keep = dist[:, 0] <= thr
        if not keep.any():
            if it == 1:
                return _failed("no overlap", it, initial)
            break
        before = float(np.sqrt(np.mean(dist[keep, 0] ** 2)))
        try:
            refit = estimate_rigid_transform(src[keep], dst[nn[keep, 0]])
        except DegenerateConfigurationError:
            break
        _, after = _rmse_pairs(refit, src[keep], dst[nn[keep, 0]])
        if after >= before:
            # the refit cannot beat the pairs it was fit to: converged
            history.append((before, before))
            converged = True
            break
        history.append((before, after))
        current = refit
        if prev_rmse is not None and abs(prev_rmse - after) <= params.convergence_epsilon * max(prev_rmse, 1e-12):
            converged = True
            break
        prev_rmse = after
    moved = current.apply(src)
    nn, dist = index.knn_batch(moved, 1)
    keep = dist[:, 0] <= thr
    count = int(keep.sum())
    if count == 0:
        return _failed("no overlap", it, current)
    rmse = float(np.sqrt(np.mean(dist[keep, 0] ** 2)))
    return RegistrationResult(current, count, count / len(src), rmse, converged, it,
                              None, tuple(history))


def _rmse_pairs(t: RigidTransform, src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, float]:
    d = t.apply(src) - dst
    d2 = np.einsum("ij,ij->i", d, d)
    return d2, float(np.sqrt(d2.mean()))
