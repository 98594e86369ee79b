"""Command-line interface: enroll, verify, keypoints and eval subcommands.

Exit codes: 0 accepted or success, 1 rejected or pipeline failure,
2 usage, I/O, format or fingerprint error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from collections import Counter
from pathlib import Path
from typing import Optional, Sequence

from .errors import (FingerprintMismatchError, InsufficientStructureError, ManifestError,
                     PlyError, RoomAuthError, TemplateFormatError)
from .evaluation import (evaluate_pairs, format_summary, read_manifest, score_distribution_export,
                         synthetic_pairs, write_report_csv)
from .fpfh import FpfhParams
from .geometry import PointCloud
from .iss import IssParams, extract_iss_keypoints
from .pipeline import (PROFILE_LABELS, PROFILES, PipelineConfig, SimilarityParams,
                       data_reduction_rate, deserialize_template, enroll_features,
                       serialize_template, verify)
from .ply import load_ply, save_ply
from .preprocess import PreprocessParams, preprocess
from .registration import IcpParams, RansacParams
from .spatial import build_index

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2
PROFILE_ENV = "ROOMAUTH_PROFILE"

_SECTIONS = [("preprocess", PreprocessParams), ("iss", IssParams), ("fpfh", FpfhParams),
             ("ransac", RansacParams), ("icp", IcpParams), ("similarity", SimilarityParams)]


class _UsageError(Exception):
    pass


def _field_names() -> Counter:
    return Counter(f.name for _, cls in _SECTIONS for f in dataclasses.fields(cls))


def _dest(section: str, name: str) -> str:
    return f"p_{section}__{name}"


def _add_param_flags(parser: argparse.ArgumentParser) -> None:
    """One flag per parameter field; names shared by two sections get a section prefix."""
    seen = _field_names()
    group = parser.add_argument_group("pipeline parameters")
    group.add_argument("--profile", choices=PROFILES, default=None,
                       help=f"keypoint profile (default: ${PROFILE_ENV} or kp2)")
    for section, cls in _SECTIONS:
        for f in dataclasses.fields(cls):
            flag = f.name if seen[f.name] == 1 else f"{section}_{f.name}"
            kind = int if str(f.type) in ("int", "Optional[int]") else float
            names = ["--" + flag.replace("_", "-")]
            if f.name == "decision_threshold":
                names.append("--threshold")
            group.add_argument(*names, dest=_dest(section, f.name), type=kind, default=None,
                               metavar=kind.__name__.upper(), help=f"{section}.{f.name}")


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    profile = args.profile or os.environ.get(PROFILE_ENV) or "kp2"
    if profile not in PROFILES:
        raise _UsageError(f"unknown profile {profile!r}; choose from {', '.join(PROFILES)}")
    config = PipelineConfig.for_profile(profile)
    sections = {}
    for section, _ in _SECTIONS:
        current = getattr(config, section)
        changes = {}
        for f in dataclasses.fields(current):
            value = getattr(args, _dest(section, f.name), None)
            if value is not None:
                changes[f.name] = value
        if changes:
            try:
                sections[section] = dataclasses.replace(current, **changes)
            except ValueError as exc:
                raise _UsageError(f"{section}: {exc}") from exc
    return dataclasses.replace(config, **sections)


def cmd_enroll(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    scan = load_ply(args.scan)
    try:
        template, feats = enroll_features(scan, config, args.created_at)
    except RoomAuthError as exc:
        print(f"enrollment failed: {_describe(exc)}", file=sys.stderr)
        return EXIT_FAIL
    data = serialize_template(template)
    Path(args.out).write_bytes(data)
    print(f"profile: {PROFILE_LABELS[config.profile]}")
    print(f"raw points: {feats.raw_count}")
    print(f"preprocessed points: {feats.preprocessed_count}")
    print(f"keypoints: {len(template)}")
    if feats.dropped:
        print(f"dropped isolated keypoints: {feats.dropped}")
    print(f"data reduction rate: {data_reduction_rate(feats.raw_count, len(template)):.3f}")
    print(f"template: {args.out} ({len(data)} bytes)")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    template = deserialize_template(Path(args.template).read_bytes())
    probe = load_ply(args.probe)
    start = time.perf_counter()
    decision = verify(template, probe, config)
    elapsed = time.perf_counter() - start
    print(f"similarity: {decision.similarity:.3f}")
    print(f"matched: {decision.matched_count}/{decision.template_count}")
    print(f"threshold: {decision.threshold:.3f}")
    reg = decision.registration
    if decision.diagnostic:
        print(f"diagnostic: {decision.diagnostic}")
    else:
        print(f"fitness: {reg.fitness:.3f}  rmse: {reg.rmse:.3f}  icp iterations: {reg.iterations_used}")
        print("transform:")
        for row in reg.transform.as_matrix():
            print("  " + " ".join(f"{v:10.6f}" for v in row))
    print(f"time: {elapsed:.2f} s")
    print(f"decision: {'ACCEPT' if decision.accepted else 'REJECT'}")
    return EXIT_OK if decision.accepted else EXIT_FAIL


def cmd_keypoints(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    scan = load_ply(args.scan)
    try:
        cloud = preprocess(scan, config.preprocess)
    except RoomAuthError as exc:
        print(f"keypoint extraction failed: {_describe(exc)}", file=sys.stderr)
        return EXIT_FAIL
    if config.dense:
        positions = cloud.points
    else:
        positions = extract_iss_keypoints(cloud, config.iss, build_index(cloud)).positions
    save_ply(PointCloud(positions), args.out, format=args.format)
    print(f"raw points: {len(scan)}")
    print(f"preprocessed points: {len(cloud)}")
    print(f"keypoints: {len(positions)} ({len(positions) / len(cloud) * 100:.2f}% of preprocessed)")
    print(f"written: {args.out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    if (args.manifest is None) == (args.synthetic is None):
        raise _UsageError("give either a manifest or --synthetic N")
    if args.synthetic is not None:
        if args.synthetic < 4:
            raise _UsageError("--synthetic needs N >= 4")
        pairs = synthetic_pairs(args.synthetic, seed=args.seed, density=args.density)
    else:
        pairs = read_manifest(args.manifest)
    try:
        report = evaluate_pairs(pairs, config, workers=args.workers)
    except ValueError as exc:
        raise ManifestError(str(exc)) from exc
    print(format_summary([report]))
    print(f"eer: {report.eer:.3f} at threshold {report.eer_threshold:.3f}")
    print(f"keypoint fraction: {report.mean_keypoint_fraction * 100:.2f}%")
    print(f"data reduction vs raw: {report.mean_reduction_raw * 100:.2f}%")
    if args.report:
        write_report_csv(report, args.report, include_timing=not args.no_timing)
        print(f"report: {args.report}")
    if args.scores:
        score_distribution_export(report, args.scores)
        print(f"scores: {args.scores}")
    return EXIT_OK


def _describe(exc: Exception) -> str:
    if isinstance(exc, InsufficientStructureError):
        return f"insufficient structure: {exc}"
    return str(exc)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roomauth",
        description="Authenticate indoor spaces from point-cloud scans with sparse keypoints.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log pipeline warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enroll", help="build a template from a scan")
    p.add_argument("scan", help="PLY scan")
    p.add_argument("--out", required=True, help="template file to write")
    p.add_argument("--created-at", type=int, default=None,
                   help="timestamp stored in the template (default: now)")
    _add_param_flags(p)
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("verify", help="check a probe scan against a template")
    p.add_argument("template", help="template file")
    p.add_argument("probe", help="PLY scan")
    _add_param_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("keypoints", help="export the keypoints of a scan as PLY")
    p.add_argument("scan", help="PLY scan")
    p.add_argument("--out", required=True, help="PLY file to write")
    p.add_argument("--format", choices=["binary", "ascii"], default="binary")
    _add_param_flags(p)
    p.set_defaults(func=cmd_keypoints)

    p = sub.add_parser("eval", help="EER, timing and data reduction over scan pairs")
    p.add_argument("manifest", nargs="?", default=None,
                   help="CSV with template_path, probe_path, is_genuine, label")
    p.add_argument("--synthetic", type=int, default=None, metavar="N",
                   help="generate N synthetic pairs instead of reading a manifest")
    p.add_argument("--seed", type=int, default=0, help="seed for synthetic pairs")
    p.add_argument("--density", type=float, default=1500.0,
                   help="synthetic surface density in points per square meter")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--report", default=None, help="per-pair CSV report")
    p.add_argument("--no-timing", action="store_true", help="omit timing from the CSV report")
    p.add_argument("--scores", default=None, help="score distribution CSV")
    _add_param_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
    except FingerprintMismatchError as exc:
        print(f"fingerprint mismatch: {exc}", file=sys.stderr)
    except (TemplateFormatError, PlyError, ManifestError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
    except RoomAuthError as exc:
        print(f"failed: {_describe(exc)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
