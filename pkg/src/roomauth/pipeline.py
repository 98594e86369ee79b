"""Enrollment and verification of indoor spaces from point-cloud scans."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import struct
import time
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike

from .errors import (BadMagicError, ChecksumMismatchError, EnrollmentError,
                     FingerprintMismatchError, InsufficientStructureError, RoomAuthError,
                     TemplateFormatError, TruncatedTemplateError, UnsupportedVersionError)
from .fpfh import FpfhParams, compute_fpfh
from .geometry import PointCloud, RigidTransform
from .iss import IssParams, KeypointSet, extract_iss_keypoints
from .preprocess import PreprocessParams, preprocess
from .registration import (IcpParams, RansacParams, RegistrationResult, icp_refine,
                           match_descriptors, ransac_register)
from .spatial import build_index

log = logging.getLogger(__name__)

PROFILES = ("dense", "kp2", "kp1")
PROFILE_LABELS = {"dense": "dense", "kp2": "keypoints-2pct", "kp1": "keypoints-1pct"}
_NON_MAX_RADIUS = {"kp2": 0.2, "kp1": 0.3}

MIN_TEMPLATE_KEYPOINTS = 10
TEMPLATE_MAGIC = b"ISSR"
TEMPLATE_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ32sq")


@dataclass(frozen=True)
class SimilarityParams:
    match_distance: float = 0.2
    decision_threshold: float = 0.5

    def __post_init__(self) -> None:
        if not self.match_distance > 0:
            raise ValueError("match_distance must be positive")
        if not 0 <= self.decision_threshold <= 1:
            raise ValueError("decision_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the pipeline plus the keypoint profile.

    ``kp2`` and ``kp1`` differ only in the ISS suppression radius; ``dense``
    skips keypoint selection and describes every preprocessed point.
    """

    profile: str = "kp2"
    preprocess: PreprocessParams = field(default_factory=PreprocessParams)
    iss: IssParams = field(default_factory=IssParams)
    fpfh: FpfhParams = field(default_factory=FpfhParams)
    ransac: RansacParams = field(default_factory=RansacParams)
    icp: IcpParams = field(default_factory=IcpParams)
    similarity: SimilarityParams = field(default_factory=SimilarityParams)

    def __post_init__(self) -> None:
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {PROFILES}, got {self.profile!r}")

    @classmethod
    def for_profile(cls, profile: str = "kp2", **sections) -> "PipelineConfig":
        iss = sections.pop("iss", None) or IssParams(non_max_radius=_NON_MAX_RADIUS.get(profile, 0.2))
        return cls(profile=profile, iss=iss, **sections)

    @property
    def dense(self) -> bool:
        return self.profile == "dense"

    def extraction_params(self) -> dict:
        """Parameters that shape the transmitted keypoints and descriptors."""
        return {
            "profile": self.profile,
            "preprocess": dataclasses.asdict(self.preprocess),
            "iss": dataclasses.asdict(self.iss),
            "fpfh": dataclasses.asdict(self.fpfh),
        }


def params_fingerprint(config: PipelineConfig) -> bytes:
    """SHA-256 over the canonical JSON of the extraction parameters."""
    text = json.dumps(config.extraction_params(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).digest()


@dataclass(frozen=True, eq=False)
class Template:
    keypoint_positions: np.ndarray
    descriptors: np.ndarray
    params_fingerprint: bytes
    raw_point_count: int
    created_at: int = 0
    version: int = TEMPLATE_VERSION

    def __post_init__(self) -> None:
        pos = np.ascontiguousarray(self.keypoint_positions, dtype=np.float64).reshape(-1, 3)
        desc = np.ascontiguousarray(self.descriptors, dtype=np.float32)
        if desc.ndim != 2 or len(desc) != len(pos):
            raise ValueError("descriptors must align with keypoint positions")
        if len(pos) < MIN_TEMPLATE_KEYPOINTS:
            raise ValueError(f"a template needs at least {MIN_TEMPLATE_KEYPOINTS} keypoints")
        if len(self.params_fingerprint) != 32:
            raise ValueError("params_fingerprint must be 32 bytes")
        object.__setattr__(self, "keypoint_positions", pos)
        object.__setattr__(self, "descriptors", desc)

    def __len__(self) -> int:
        return len(self.keypoint_positions)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Template):
            return NotImplemented
        return (self.version == other.version
                and self.params_fingerprint == other.params_fingerprint
                and self.raw_point_count == other.raw_point_count
                and self.created_at == other.created_at
                and np.array_equal(self.keypoint_positions, other.keypoint_positions)
                and np.array_equal(self.descriptors, other.descriptors))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ScanFeatures:
    """What one scan contributes after device-side processing."""

    positions: np.ndarray
    descriptors: np.ndarray
    raw_count: int
    preprocessed_count: int
    dropped: int


@dataclass(frozen=True, eq=False)
class AuthDecision:
    similarity: float
    threshold: float
    accepted: bool
    registration: RegistrationResult
    matched_count: int
    template_count: int
    diagnostic: Optional[str] = None
    coarse: Optional[RegistrationResult] = None


def extract_features(raw_scan: PointCloud, config: PipelineConfig) -> ScanFeatures:
    cloud = preprocess(raw_scan, config.preprocess)
    index = build_index(cloud)
    if config.dense:
        keypoints = KeypointSet.from_indices(cloud, np.arange(len(cloud)))
    else:
        keypoints = extract_iss_keypoints(cloud, config.iss, index)
    desc = compute_fpfh(cloud, index, keypoints, config.fpfh)
    return ScanFeatures(keypoints.positions[desc.kept], desc.descriptors.astype(np.float32),
                        len(raw_scan), len(cloud), desc.dropped)


def enroll_features(raw_scan: PointCloud, config: PipelineConfig,
                    created_at: Optional[int] = None) -> tuple[Template, ScanFeatures]:
    if len(raw_scan) == 0:
        raise EnrollmentError("enrollment failed: empty scan")
    feats = extract_features(raw_scan, config)
    if len(feats.positions) < MIN_TEMPLATE_KEYPOINTS:
        raise EnrollmentError(
            f"enrollment failed: too few keypoints ({len(feats.positions)} < {MIN_TEMPLATE_KEYPOINTS})")
    stamp = int(time.time()) if created_at is None else int(created_at)
    template = Template(feats.positions, feats.descriptors, params_fingerprint(config),
                        feats.raw_count, stamp)
    return template, feats


def enroll(raw_scan: PointCloud, config: PipelineConfig = PipelineConfig(),
           created_at: Optional[int] = None) -> Template:
    return enroll_features(raw_scan, config, created_at)[0]


def similarity_score(template_kp: ArrayLike, probe_kp: ArrayLike, transform: RigidTransform,
                     match_distance: float) -> tuple[float, int]:
    """Fraction of template keypoints with a transformed probe keypoint within ``match_distance``."""
    tpl = np.asarray(template_kp, dtype=np.float64).reshape(-1, 3)
    if len(tpl) == 0:
        raise ValueError("template keypoints must be non-empty")
    probe = np.asarray(probe_kp, dtype=np.float64).reshape(-1, 3)
    if len(probe) == 0:
        return 0.0, 0
    _, dist = build_index(transform.apply(probe)).knn_batch(tpl, 1)
    matched = int((dist[:, 0] <= match_distance).sum())
    return matched / len(tpl), matched


def _reject(template: Template, threshold: float, reason: str,
            registration: Optional[RegistrationResult] = None,
            coarse: Optional[RegistrationResult] = None) -> AuthDecision:
    if registration is None:
        registration = RegistrationResult(RigidTransform.identity(), 0, 0.0, 0.0, False, 0, reason)
    return AuthDecision(0.0, threshold, False, registration, 0, len(template), reason, coarse)


def verify_features(template: Template, probe: ScanFeatures,
                    config: PipelineConfig) -> AuthDecision:
    """Server-side half of verification: register the probe and score it."""
    thr = config.similarity.decision_threshold
    s = config.ransac.sample_size
    if len(probe.positions) < s:
        return _reject(template, thr, f"probe has only {len(probe.positions)} keypoints")
    corr = match_descriptors(probe.descriptors.astype(np.float64),
                             template.descriptors.astype(np.float64))
    if len(corr) < s:
        return _reject(template, thr, f"only {len(corr)} descriptor correspondences")
    coarse = ransac_register(probe.positions, template.keypoint_positions, corr, config.ransac)
    if coarse.failed:
        return _reject(template, thr, coarse.failure, coarse, coarse)
    fine = icp_refine(probe.positions, template.keypoint_positions, coarse.transform, config.icp)
    if fine.failed:
        return _reject(template, thr, f"ICP: {fine.failure}", fine, coarse)
    sim, matched = similarity_score(template.keypoint_positions, probe.positions,
                                    fine.transform, config.similarity.match_distance)
    return AuthDecision(sim, thr, sim >= thr, fine, matched, len(template), None, coarse)


def check_compatible(template: Template, config: PipelineConfig) -> None:
    if template.params_fingerprint != params_fingerprint(config):
        raise FingerprintMismatchError(
            "template was enrolled with different preprocessing/keypoint/descriptor parameters")


def verify(template: Template, probe_scan: PointCloud,
           config: PipelineConfig = PipelineConfig()) -> AuthDecision:
    """Authenticate a probe scan against an enrolled template.

    Parameter mismatches raise; every failure after that is a rejection.
    """
    check_compatible(template, config)
    try:
        probe = extract_features(probe_scan, config)
    except RoomAuthError as exc:
        kind = "insufficient structure: " if isinstance(exc, InsufficientStructureError) else ""
        return _reject(template, config.similarity.decision_threshold,
                       f"probe processing: {kind}{exc}")
    return verify_features(template, probe, config)


def data_reduction_rate(raw_point_count: int, transmitted_keypoint_count: int) -> float:
    """Share of points kept on the device: ``1 - transmitted / raw``."""
    if raw_point_count <= 0:
        raise ValueError("raw point count must be positive")
    if not 0 <= transmitted_keypoint_count <= raw_point_count:
        raise ValueError("transmitted count must lie in [0, raw count]")
    return 1.0 - transmitted_keypoint_count / raw_point_count


def serialize_template(t: Template) -> bytes:
    """Canonical little-endian binary form, CRC32-terminated."""
    count, dim = t.descriptors.shape
    body = (_HEADER.pack(TEMPLATE_MAGIC, t.version, count, dim, t.raw_point_count,
                         t.params_fingerprint, t.created_at)
            + t.keypoint_positions.astype("<f8").tobytes()
            + t.descriptors.astype("<f4").tobytes())
    return body + struct.pack("<I", zlib.crc32(body))


def serialized_size(count: int, dim: int) -> int:
    return _HEADER.size + count * (24 + 4 * dim) + 4


def deserialize_template(data: bytes) -> Template:
    data = bytes(data)
    if len(data) < 4 or data[:4] != TEMPLATE_MAGIC:
        if len(data) < 4 and TEMPLATE_MAGIC.startswith(data):
            raise TruncatedTemplateError("template shorter than its magic")
        raise BadMagicError("not a template (bad magic)")
    if len(data) < 8:
        raise TruncatedTemplateError("template truncated inside header")
    version = struct.unpack_from("<I", data, 4)[0]
    if version != TEMPLATE_VERSION:
        raise UnsupportedVersionError(f"unsupported template version {version}")
    if len(data) < _HEADER.size + 4:
        raise TruncatedTemplateError("template truncated inside header")
    _, _, count, dim, raw, fp, created = _HEADER.unpack_from(data, 0)
    expected = serialized_size(count, dim)
    if len(data) < expected:
        raise TruncatedTemplateError(f"template has {len(data)} bytes, header implies {expected}")
    if len(data) > expected:
        raise TemplateFormatError(f"{len(data) - expected} trailing bytes after template")
    (crc,) = struct.unpack_from("<I", data, expected - 4)
    if crc != zlib.crc32(data[:expected - 4]):
        raise ChecksumMismatchError("template checksum mismatch")
    off = _HEADER.size
    pos = np.frombuffer(data, "<f8", count * 3, off).reshape(count, 3).astype(np.float64)
    off += count * 24
    desc = np.frombuffer(data, "<f4", count * dim, off).reshape(count, dim).astype(np.float32)
    try:
        return Template(pos, desc, fp, raw, created, version)
    except ValueError as exc:
        raise TemplateFormatError(str(exc)) from exc


def template_to_text(t: Template) -> str:
    """Debug dump: one keypoint per line, position then descriptor."""
    lines = [f"# roomauth template v{t.version} keypoints={len(t)} raw_points={t.raw_point_count} "
             f"fingerprint={t.params_fingerprint.hex()} created_at={t.created_at}"]
    for p, d in zip(t.keypoint_positions, t.descriptors):
        lines.append(" ".join([f"{v:.6f}" for v in p] + [f"{v:.4f}" for v in d]))
    return "\n".join(lines) + "\n"
