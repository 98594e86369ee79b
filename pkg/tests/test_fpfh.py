import logging
import math

import numpy as np
import pytest

from roomauth.errors import IsolatedKeypointError
from roomauth.fpfh import FpfhParams, compute_fpfh, compute_spfh, pair_features
from roomauth.geometry import PointCloud, apply_transform
from roomauth.spatial import build_index

from helpers import random_transform, two_planes, unit


def oracle_spfh(points, normals, center, radius, bins):
    """Loop-based histogram: role choice, direct formulas, integer binning."""
    hist = np.zeros((3, bins))
    ps, ns = points[center], normals[center]
    for j in range(len(points)):
        pt, nt = points[j], normals[j]
        d = pt - ps
        dist = math.sqrt(float(d @ d))
        if j == center or dist > radius or not np.any(nt):
            continue
        dh = d / dist
        if abs(ns @ dh) >= abs(nt @ dh):
            f = pair_features(ps, ns, pt, nt)
        else:
            f = pair_features(pt, nt, ps, ns)
        if f is None:
            continue
        for row, (x, lo, hi) in enumerate(zip(f, (-1, -1, -math.pi), (1, 1, math.pi))):
            hist[row, min(bins - 1, max(0, int(math.floor((x - lo) / (hi - lo) * bins))))] += 1
    return (hist / hist.sum(axis=1, keepdims=True) * 100).ravel()


class TestPairFeatures:
    def test_flat_pair_is_zero(self):
        assert pair_features((0, 0, 0), (0, 0, 1), (1, 0, 0), (0, 0, 1)) == (0.0, 0.0, 0.0)

    def test_matches_formulas(self, rng):
        for _ in range(200):
            ps, pt = rng.normal(size=3), rng.normal(size=3)
            ns, nt = unit(rng.normal(size=3)), unit(rng.normal(size=3))
            d = (pt - ps) / np.linalg.norm(pt - ps)
            v = unit(np.cross(ns, d))
            w = np.cross(ns, v)
            alpha, phi, theta = pair_features(ps, ns, pt, nt)
            assert alpha == pytest.approx(v @ nt, abs=1e-12)
            assert phi == pytest.approx(ns @ d, abs=1e-12)
            assert theta == pytest.approx(math.atan2(w @ nt, ns @ nt), abs=1e-12)
            assert -1 <= alpha <= 1 and -1 <= phi <= 1 and -math.pi < theta <= math.pi

    def test_coincident_points(self):
        with pytest.raises(ValueError):
            pair_features((1, 2, 3), (0, 0, 1), (1, 2, 3), (0, 0, 1))

    def test_parallel_frame_skipped(self):
        assert pair_features((0, 0, 0), (0, 0, 1), (0, 0, 1), (1, 0, 0)) is None


class TestSpfh:
    def test_single_neighbor_single_bins(self):
        pts = np.array([[0, 0, 0], [0.1, 0, 0.02]])
        n = unit([[0, 0.3, 1], [0.2, 0, 1]])
        c = PointCloud(pts, n)
        h = compute_spfh(c, build_index(c), 0).reshape(3, -1)
        assert np.array_equal(np.sort(h, axis=1)[:, -1], [100.0] * 3)
        assert np.count_nonzero(h) == 3

    def test_sums_to_100(self, rng):
        for _ in range(20):
            c = PointCloud(rng.normal(size=(60, 3)) * 0.1, unit(rng.normal(size=(60, 3))))
            h = compute_spfh(c, build_index(c), 0).reshape(3, -1)
            assert np.abs(h.sum(axis=1) - 100).max() < 1e-6

    def test_matches_binning_oracle(self, rng):
        for _ in range(20):
            pts = rng.normal(size=(20, 3)) * 0.08
            nrm = unit(rng.normal(size=(20, 3)))
            c = PointCloud(pts, nrm)
            params = FpfhParams()
            got = compute_spfh(c, build_index(c), 0, params)
            ref = oracle_spfh(pts, nrm, 0, params.feature_radius, params.bins_per_feature)
            assert np.allclose(got, ref, atol=1e-9)

    def test_isolated_center(self):
        c = PointCloud(np.array([[0, 0, 0], [5, 5, 5.0]]), np.array([[0, 0, 1.0], [0, 0, 1.0]]))
        with pytest.raises(IsolatedKeypointError):
            compute_spfh(c, build_index(c), 0)


class TestFpfh:
    def test_matches_weighted_formula(self, rng):
        c = two_planes(rng, 150)
        idx = build_index(c)
        params = FpfhParams()
        kp = np.array([0, 10, 200])
        out = compute_fpfh(c, idx, kp, params)
        for row, i in enumerate(kp):
            acc = np.zeros(params.dimension)
            d = np.linalg.norm(c.points - c.points[i], axis=1)
            nbrs = [j for j in range(len(c)) if j != i and 0 < d[j] <= params.feature_radius]
            for j in nbrs:
                acc += compute_spfh(c, idx, j, params) / d[j]
            raw = (compute_spfh(c, idx, int(i), params) + acc / len(nbrs)).reshape(3, -1)
            ref = (raw / raw.sum(axis=1, keepdims=True) * 100).ravel()
            assert np.allclose(out.descriptors[row], ref, atol=1e-9)

    def test_dimension_and_sums(self, rng):
        c = two_planes(rng)
        out = compute_fpfh(c, build_index(c), np.arange(0, 800, 37))
        assert out.descriptors.shape == (len(range(0, 800, 37)), 33)
        sums = out.descriptors.reshape(len(out), 3, 11).sum(axis=2)
        assert np.abs(sums - 100).max() < 1e-9

    def test_rotation_invariance(self, rng):
        c = two_planes(rng)
        kp = np.array([3, 50, 410, 777])
        base = compute_fpfh(c, build_index(c), kp).descriptors
        for _ in range(20):
            moved = apply_transform(c, random_transform(rng))
            desc = compute_fpfh(moved, build_index(moved), kp).descriptors
            assert np.abs(desc - base).sum(axis=1).max() < 1e-6

    def test_isolated_keypoints_dropped(self, rng, caplog):
        c = two_planes(rng, 100)
        pts = np.vstack([c.points, [[9.0, 9.0, 9.0]]])
        nrm = np.vstack([c.normals, [[0.0, 0.0, 1.0]]])
        cloud = PointCloud(pts, nrm)
        with caplog.at_level(logging.WARNING):
            out = compute_fpfh(cloud, build_index(cloud), [5, 200, 50])
        assert out.dropped == 1 and out.kept.tolist() == [0, 2]
        assert len(out) == 3 - out.dropped
        assert "isolated" in caplog.text

    def test_deterministic(self, rng):
        c = two_planes(rng)
        a = compute_fpfh(c, build_index(c), np.arange(0, 800, 7)).descriptors
        b = compute_fpfh(c, build_index(c), np.arange(0, 800, 7)).descriptors
        assert np.array_equal(a, b)

    def test_needs_normals(self):
        c = PointCloud(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            compute_fpfh(c, build_index(c), [0])

    def test_params_validation(self):
        with pytest.raises(ValueError):
            FpfhParams(feature_radius=0)
        with pytest.raises(ValueError):
            FpfhParams(bins_per_feature=1)
