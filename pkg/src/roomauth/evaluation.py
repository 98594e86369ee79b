"""Genuine/impostor evaluation: EER, timing, data reduction, synthetic rooms."""

from __future__ import annotations

import csv
import dataclasses
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InsufficientStructureError, ManifestError, RoomAuthError
from .geometry import PointCloud, RigidTransform, apply_transform
from .pipeline import (PROFILE_LABELS, PipelineConfig, data_reduction_rate, enroll_features,
                       extract_features, verify_features)
from .ply import load_ply

# ---------------------------------------------------------------------------
# synthetic rooms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Furniture:
    """A primitive standing on the floor (or raised by ``elevation``).

    ``size`` is (length, width, height) in the object's own frame; cylinders
    use length as diameter. L-shapes are two boxes sharing a corner, each arm
    ``arm`` meters wide.
    """

    kind: str
    center: tuple[float, float]
    size: tuple[float, float, float]
    yaw: float = 0.0
    elevation: float = 0.0
    arm: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in ("box", "cylinder", "lshape"):
            raise ValueError(f"unknown furniture kind {self.kind!r}")
        if min(self.size) <= 0:
            raise ValueError("furniture size must be positive")


@dataclass(frozen=True)
class RoomSpec:
    seed: int
    extents: tuple[float, float, float] = (4.0, 3.0, 2.5)
    density: float = 400.0
    furniture: tuple[Furniture, ...] = ()
    noise_sigma: float = 0.0
    crop_fraction: float = 0.0

    def __post_init__(self) -> None:
        if min(self.extents) <= 0:
            raise ValueError("room extents must be positive")
        if not self.density > 0:
            raise ValueError("density must be positive")
        if not 0 <= self.crop_fraction < 1:
            raise ValueError("crop_fraction must lie in [0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def _rect(rng, n, origin, e1, e2):
    uv = rng.random((n, 2))
    return origin + uv[:, :1] * e1 + uv[:, 1:] * e2


def _box_faces(lx, ly, lz, z0):
    """Top and four sides of an axis-aligned box centered on the origin: (origin, e1, e2)."""
    hx, hy = lx / 2, ly / 2
    ex, ey, ez = np.array([lx, 0, 0.0]), np.array([0, ly, 0.0]), np.array([0, 0, lz])
    return [
        (np.array([-hx, -hy, z0 + lz]), ex, ey),
        (np.array([-hx, -hy, z0]), ex, ez),
        (np.array([-hx, hy, z0]), ex, ez),
        (np.array([-hx, -hy, z0]), ey, ez),
        (np.array([hx, -hy, z0]), ey, ez),
    ]


def _furniture_points(rng, f: Furniture, density: float) -> np.ndarray:
    lx, ly, lz = f.size
    parts = []
    if f.kind == "cylinder":
        r = lx / 2
        n_side = int(round(2 * np.pi * r * lz * density))
        a = rng.random(n_side) * 2 * np.pi
        parts.append(np.column_stack([r * np.cos(a), r * np.sin(a),
                                      f.elevation + rng.random(n_side) * lz]))
        n_top = int(round(np.pi * r * r * density))
        rad = r * np.sqrt(rng.random(n_top))
        a = rng.random(n_top) * 2 * np.pi
        parts.append(np.column_stack([rad * np.cos(a), rad * np.sin(a),
                                      np.full(n_top, f.elevation + lz)]))
    else:
        boxes = [((0.0, 0.0), (lx, ly))]
        if f.kind == "lshape":
            w = min(f.arm, lx, ly)
            boxes = [((0.0, (w - ly) / 2), (lx, w)), (((w - lx) / 2, 0.0), (w, ly))]
        for (cx, cy), (bx, by) in boxes:
            for origin, e1, e2 in _box_faces(bx, by, lz, f.elevation):
                area = np.linalg.norm(np.cross(e1, e2))
                pts = _rect(rng, int(round(area * density)), origin, e1, e2)
                parts.append(pts + [cx, cy, 0.0])
    local = np.concatenate(parts) if parts else np.zeros((0, 3))
    rot = RigidTransform.from_axis_angle((0, 0, 1), f.yaw, (f.center[0], f.center[1], 0.0))
    return rot.apply(local)


def furniture_area(f: Furniture) -> float:
    """Sampled surface area of one primitive."""
    lx, ly, lz = f.size
    if f.kind == "cylinder":
        r = lx / 2
        return 2 * np.pi * r * lz + np.pi * r * r
    boxes = [(lx, ly)]
    if f.kind == "lshape":
        w = min(f.arm, lx, ly)
        boxes = [(lx, w), (w, ly)]
    return sum(bx * by + 2 * (bx + by) * lz for bx, by in boxes)


def crop_farthest(points: np.ndarray, fraction: float, direction: np.ndarray) -> np.ndarray:
    """Indices (in input order) of the points left after removing the ``fraction``
    lying farthest along ``direction``."""
    n = len(points)
    removed = int(math.floor(fraction * n + 1e-9))
    if removed == 0:
        return np.arange(n)
    proj = points @ direction
    order = np.argsort(proj, kind="stable")
    return np.sort(order[:n - removed])


def _random_direction(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def generate_room(spec: RoomSpec) -> PointCloud:
    """Sample floor, ceiling, walls and furniture surfaces at ``spec.density``.

    The room spans x in [-W/2, W/2], y in [-D/2, D/2], z in [0, H].
    """
    rng = np.random.default_rng(spec.seed)
    w, d, h = spec.extents
    o = np.array([-w / 2, -d / 2, 0.0])
    ex, ey, ez = np.array([w, 0, 0.0]), np.array([0, d, 0.0]), np.array([0, 0, h])
    planes = [(o, ex, ey), (o + ez, ex, ey), (o, ex, ez), (o + ey, ex, ez),
              (o, ey, ez), (o + ex, ey, ez)]
    parts = []
    for origin, e1, e2 in planes:
        area = np.linalg.norm(np.cross(e1, e2))
        parts.append(_rect(rng, int(round(area * spec.density)), origin, e1, e2))
    for f in spec.furniture:
        parts.append(_furniture_points(rng, f, spec.density))
    pts = np.concatenate(parts)
    if spec.noise_sigma > 0:
        pts = pts + rng.normal(scale=spec.noise_sigma, size=pts.shape)
    if spec.crop_fraction > 0:
        pts = pts[crop_farthest(pts, spec.crop_fraction, _random_direction(rng))]
    return PointCloud(pts)


def room_area(spec: RoomSpec) -> float:
    w, d, h = spec.extents
    return 2 * (w * d + w * h + d * h) + sum(furniture_area(f) for f in spec.furniture)


def random_room_spec(rng: np.random.Generator, density: float = 1500.0,
                     noise_sigma: float = 0.01, n_furniture: tuple[int, int] = (5, 9)) -> RoomSpec:
    """A furnished room with random size and layout."""
    w = float(rng.uniform(3.5, 6.0))
    d = float(rng.uniform(3.0, 5.0))
    h = float(rng.uniform(2.4, 3.0))
    items = []
    for _ in range(int(rng.integers(n_furniture[0], n_furniture[1] + 1))):
        kind = str(rng.choice(["box", "box", "cylinder", "lshape"]))
        if kind == "cylinder":
            dia = float(rng.uniform(0.3, 0.8))
            size = (dia, dia, float(rng.uniform(0.4, 1.2)))
        else:
            size = (float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.4, 1.2)),
                    float(rng.uniform(0.4, 2.0)))
        margin = max(size[0], size[1]) / 2 + 0.05
        cx = float(rng.uniform(-w / 2 + margin, w / 2 - margin)) if w / 2 > margin else 0.0
        cy = float(rng.uniform(-d / 2 + margin, d / 2 - margin)) if d / 2 > margin else 0.0
        elevation = float(rng.uniform(0.5, 0.9)) if kind == "box" and rng.random() < 0.25 else 0.0
        if elevation:
            size = (size[0], size[1], float(rng.uniform(0.04, 0.1)))  # a table top
        items.append(Furniture(kind, (cx, cy), size, float(rng.uniform(0, np.pi)), elevation,
                               float(rng.uniform(0.35, 0.6))))
    return RoomSpec(int(rng.integers(2**31)), (w, d, h), density, tuple(items), noise_sigma)


def random_rigid_transform(rng: np.random.Generator, max_angle_deg: float,
                           max_translation: float, axis: Optional[Sequence[float]] = None
                           ) -> RigidTransform:
    """Rotation of up to ``max_angle_deg`` about ``axis`` (random when None) and a
    translation of norm up to ``max_translation``."""
    ax = _random_direction(rng) if axis is None else np.asarray(axis, dtype=np.float64)
    angle = np.radians(rng.uniform(-max_angle_deg, max_angle_deg))
    t = _random_direction(rng) * rng.uniform(0.0, max_translation)
    return RigidTransform.from_axis_angle(ax, angle, t)


def perturb_scan(cloud: PointCloud, transform: RigidTransform, noise_sigma: float,
                 crop_fraction: float, seed: int) -> PointCloud:
    """Move, jitter and partially crop a scan to emulate a re-capture."""
    if not 0 <= crop_fraction < 1:
        raise ValueError("crop_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    moved = apply_transform(cloud, transform)
    pts = moved.points
    if noise_sigma > 0:
        pts = pts + rng.normal(scale=noise_sigma, size=pts.shape)
    keep = crop_farthest(pts, crop_fraction, _random_direction(rng))
    normals = None if moved.normals is None else moved.normals[keep]
    return PointCloud(pts[keep], normals)


# ---------------------------------------------------------------------------
# pair evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScenePair:
    template_scan: PointCloud
    probe_scan: PointCloud
    is_genuine: bool
    label: str

    def __post_init__(self) -> None:
        if len(self.template_scan) == 0 or len(self.probe_scan) == 0:
            raise ValueError("scans must be non-empty")


@dataclass(frozen=True)
class PairRecord:
    label: str
    is_genuine: bool
    similarity: float
    elapsed: float
    reduction: float          # vs. the dense baseline (all preprocessed points)
    reduction_raw: float      # vs. the raw scan
    template_keypoints: int
    preprocessed_points: int
    raw_points: int
    matched: int
    fitness: float
    rmse: float
    converged: bool
    failure: str = ""

    @property
    def keypoint_fraction(self) -> float:
        return self.template_keypoints / self.preprocessed_points if self.preprocessed_points else 0.0


@dataclass(frozen=True)
class EvalReport:
    records: tuple[PairRecord, ...]
    eer: float
    eer_threshold: float
    accuracy_at_eer: float
    mean_time: float
    mean_reduction: float
    mean_reduction_raw: float
    mean_keypoint_fraction: float
    mode: str

    def scores(self, genuine: bool) -> list[float]:
        return [r.similarity for r in self.records if r.is_genuine == genuine]

    def without_timing(self) -> "EvalReport":
        recs = tuple(dataclasses.replace(r, elapsed=0.0) for r in self.records)
        return dataclasses.replace(self, records=recs, mean_time=0.0)


def compute_eer(genuine_scores: Sequence[float], impostor_scores: Sequence[float]
                ) -> tuple[float, float]:
    """Equal error rate on the empirical FRR/FAR step functions.

    FRR(t) counts genuine scores below t, FAR(t) impostor scores at or above t.
    Candidate thresholds are every observed score plus +inf; the one with the
    smallest |FRR - FAR| wins (lowest on ties) and the EER is their midpoint.
    """
    g = np.sort(np.asarray(genuine_scores, dtype=np.float64))
    im = np.sort(np.asarray(impostor_scores, dtype=np.float64))
    if len(g) == 0 or len(im) == 0:
        raise ValueError("both score lists must be non-empty")
    thresholds = np.append(np.unique(np.concatenate([g, im])), np.inf)
    rejected = np.searchsorted(g, thresholds, side="left")
    accepted = len(im) - np.searchsorted(im, thresholds, side="left")
    # compare |FRR - FAR| on integer cross-products so equal gaps tie exactly
    gap = np.abs(rejected * len(im) - accepted * len(g))
    best = int(np.argmin(gap))
    frr, far = rejected[best] / len(g), accepted[best] / len(im)
    return float((frr + far) / 2), float(thresholds[best])


def evaluate_pair(pair: ScenePair, config: PipelineConfig) -> PairRecord:
    start = time.perf_counter()
    failure = ""
    try:
        template, feats = enroll_features(pair.template_scan, config, created_at=0)
        decision = None
        try:
            probe = extract_features(pair.probe_scan, config)
        except RoomAuthError as exc:
            kind = "insufficient structure: " if isinstance(exc, InsufficientStructureError) else ""
            failure = f"probe processing: {kind}{exc}"
        else:
            decision = verify_features(template, probe, config)
    except RoomAuthError as exc:
        elapsed = time.perf_counter() - start
        return PairRecord(pair.label, pair.is_genuine, 0.0, elapsed, 1.0, 1.0, 0, 0,
                          len(pair.template_scan), 0, 0.0, 0.0, False, f"enrollment: {exc}")
    elapsed = time.perf_counter() - start
    kp = len(template)
    pre = feats.preprocessed_count
    reduction = 0.0 if config.dense else data_reduction_rate(pre, min(kp, pre))
    reduction_raw = data_reduction_rate(feats.raw_count, min(kp, feats.raw_count))
    if decision is None:
        return PairRecord(pair.label, pair.is_genuine, 0.0, elapsed, reduction, reduction_raw,
                          kp, pre, feats.raw_count, 0, 0.0, 0.0, False, failure)
    reg = decision.registration
    return PairRecord(pair.label, pair.is_genuine, decision.similarity, elapsed, reduction,
                      reduction_raw, kp, pre, feats.raw_count, decision.matched_count,
                      reg.fitness, reg.rmse, reg.converged, decision.diagnostic or "")


def _evaluate_one(args):
    return evaluate_pair(*args)


def evaluate_pairs(pairs: Sequence[ScenePair], config: PipelineConfig,
                   mode: Optional[str] = None, workers: int = 1) -> EvalReport:
    """Enroll and verify every pair; ``mode`` overrides the config's profile."""
    if mode is not None and mode != config.profile:
        iss = config.iss
        if mode in ("kp2", "kp1"):
            iss = dataclasses.replace(iss, non_max_radius=0.2 if mode == "kp2" else 0.3)
        config = dataclasses.replace(config, profile=mode, iss=iss)
    n_gen = sum(p.is_genuine for p in pairs)
    if n_gen < 2 or len(pairs) - n_gen < 2:
        raise ValueError("need at least 2 genuine and 2 impostor pairs")
    jobs = [(p, config) for p in pairs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = tuple(pool.map(_evaluate_one, jobs))
    else:
        records = tuple(_evaluate_one(j) for j in jobs)
    return summarize(records, config.profile)


def summarize(records: Sequence[PairRecord], profile: str) -> EvalReport:
    gen = [r.similarity for r in records if r.is_genuine]
    imp = [r.similarity for r in records if not r.is_genuine]
    eer, thr = compute_eer(gen, imp)
    return EvalReport(
        records=tuple(records),
        eer=eer,
        eer_threshold=thr,
        accuracy_at_eer=1.0 - eer,
        mean_time=float(np.mean([r.elapsed for r in records])),
        mean_reduction=float(np.mean([r.reduction for r in records])),
        mean_reduction_raw=float(np.mean([r.reduction_raw for r in records])),
        mean_keypoint_fraction=float(np.mean([r.keypoint_fraction for r in records])),
        mode=PROFILE_LABELS[profile],
    )


def synthetic_pairs(n_pairs: int, seed: int = 0, density: float = 1500.0,
                    max_rotation_deg: float = 30.0, max_translation: float = 2.0,
                    noise_sigma: float = 0.01, crop_fraction: float = 0.3,
                    rotation_axis: Optional[Sequence[float]] = (0.0, 0.0, 1.0)) -> list[ScenePair]:
    """Half genuine pairs (a room and a moved, noisy, cropped rescan of it) and
    half impostor pairs (two different rooms)."""
    if n_pairs < 4:
        raise ValueError("need at least 4 pairs")
    rng = np.random.default_rng(seed)
    n_gen = n_pairs // 2
    pairs = []
    for i in range(n_pairs):
        genuine = i < n_gen
        spec = random_room_spec(rng, density, noise_sigma)
        template = generate_room(spec)
        other = spec if genuine else random_room_spec(rng, density, noise_sigma)
        rescan = generate_room(dataclasses.replace(other, seed=int(rng.integers(2**31)),
                                                   noise_sigma=0.0))
        t = random_rigid_transform(rng, max_rotation_deg, max_translation, rotation_axis)
        probe = perturb_scan(rescan, t, noise_sigma, crop_fraction, int(rng.integers(2**31)))
        pairs.append(ScenePair(template, probe, genuine, f"{'gen' if genuine else 'imp'}-{i:03d}"))
    return pairs


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

REPORT_FIELDS = ["label", "is_genuine", "similarity", "elapsed_s", "reduction", "reduction_raw",
                 "template_keypoints", "preprocessed_points", "raw_points", "matched",
                 "fitness", "rmse", "converged", "failure"]


def write_report_csv(report: EvalReport, path: str | os.PathLike, include_timing: bool = True) -> None:
    fields = [f for f in REPORT_FIELDS if include_timing or f != "elapsed_s"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for r in report.records:
            row = {"label": r.label, "is_genuine": int(r.is_genuine),
                   "similarity": repr(r.similarity), "elapsed_s": f"{r.elapsed:.6f}",
                   "reduction": repr(r.reduction), "reduction_raw": repr(r.reduction_raw),
                   "template_keypoints": r.template_keypoints,
                   "preprocessed_points": r.preprocessed_points, "raw_points": r.raw_points,
                   "matched": r.matched, "fitness": repr(r.fitness), "rmse": repr(r.rmse),
                   "converged": int(r.converged), "failure": r.failure}
            w.writerow([row[f] for f in fields])


def score_distribution_export(report: EvalReport, path: str | os.PathLike) -> None:
    """CSV of (label, is_genuine, similarity) for histogramming elsewhere."""
    if not report.records:
        raise ValueError("empty report")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "is_genuine", "similarity"])
        for r in report.records:
            w.writerow([r.label, int(r.is_genuine), repr(r.similarity)])


def read_manifest(path: str | os.PathLike) -> list[ScenePair]:
    """Load pairs listed in a CSV with columns template_path, probe_path, is_genuine, label.

    Relative paths resolve against the manifest's directory.
    """
    base = Path(path).parent
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest: {exc}") from exc
    need = {"template_path", "probe_path", "is_genuine", "label"}
    if not rows:
        raise ManifestError("manifest lists no pairs")
    if not need <= set(rows[0]):
        raise ManifestError(f"manifest must have columns {sorted(need)}")
    pairs = []
    for i, row in enumerate(rows):
        flag = row["is_genuine"].strip().lower()
        if flag not in ("1", "0", "true", "false", "yes", "no"):
            raise ManifestError(f"row {i + 1}: bad is_genuine value {row['is_genuine']!r}")
        try:
            tpl = load_ply(base / row["template_path"])
            probe = load_ply(base / row["probe_path"])
        except (OSError, RoomAuthError) as exc:
            raise ManifestError(f"row {i + 1}: {exc}") from exc
        pairs.append(ScenePair(tpl, probe, flag in ("1", "true", "yes"), row["label"]))
    return pairs


def format_summary(reports: Iterable[EvalReport]) -> str:
    """Aligned text table with Accuracy, Time and Data reduction columns."""
    lines = [f"{'Method':<16}{'Accuracy':>10}{'EER':>8}{'Time (s)':>10}{'Data reduction rate':>22}"]
    for r in reports:
        lines.append(f"{r.mode:<16}{r.accuracy_at_eer * 100:>9.1f}%{r.eer:>8.3f}"
                     f"{r.mean_time:>10.2f}{r.mean_reduction * 100:>21.1f}%")
    return "\n".join(lines)
