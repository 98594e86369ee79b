import csv

import pytest

from roomauth.cli import build_parser, config_from_args, main
from roomauth.geometry import PointCloud, RigidTransform
from roomauth.pipeline import deserialize_template
from roomauth.ply import load_ply, save_ply


@pytest.fixture(scope="module")
def scans(tmp_path_factory, small_room, other_room):
    d = tmp_path_factory.mktemp("scans")
    save_ply(small_room, d / "room.ply")
    save_ply(other_room, d / "other.ply")
    return d


@pytest.fixture(scope="module")
def template(scans):
    assert main(["enroll", str(scans / "room.ply"), "--out", str(scans / "room.issr"),
                 "--created-at", "0"]) == 0
    return scans / "room.issr"


def test_enroll_writes_template(template, capsys):
    t = deserialize_template(template.read_bytes())
    assert len(t) >= 10 and t.created_at == 0


def test_enroll_output(scans, capsys):
    main(["enroll", str(scans / "room.ply"), "--out", str(scans / "x.issr")])
    out = capsys.readouterr().out
    for key in ("raw points:", "keypoints:", "data reduction rate:"):
        assert key in out


def test_enroll_five_points(tmp_path, rng, capsys):
    save_ply(PointCloud(rng.uniform(0, 0.3, (5, 3))), tmp_path / "five.ply")
    assert main(["enroll", str(tmp_path / "five.ply"), "--out", str(tmp_path / "t.issr")]) == 1
    assert "insufficient structure" in capsys.readouterr().err


def test_enroll_missing_file(tmp_path):
    assert main(["enroll", str(tmp_path / "nope.ply"), "--out", str(tmp_path / "t.issr")]) == 2


def reduction(text):
    line = [l for l in text.splitlines() if l.startswith("data reduction rate")][0]
    return float(line.split(":")[1])


def test_kp1_reduction_at_least_kp2(scans, capsys):
    main(["enroll", str(scans / "room.ply"), "--out", str(scans / "a.issr")])
    kp2 = reduction(capsys.readouterr().out)
    main(["enroll", str(scans / "room.ply"), "--out", str(scans / "b.issr"), "--profile", "kp1"])
    assert reduction(capsys.readouterr().out) >= kp2


def test_verify_self(template, scans, capsys):
    assert main(["verify", str(template), str(scans / "room.ply")]) == 0
    out = capsys.readouterr().out
    assert "similarity: 1.000" in out and "ACCEPT" in out


def test_verify_other_room(template, scans, capsys):
    assert main(["verify", str(template), str(scans / "other.ply")]) == 1
    assert "REJECT" in capsys.readouterr().out


def test_verify_threshold_flag(template, scans):
    assert main(["verify", str(template), str(scans / "other.ply"), "--threshold", "0"]) == 0


def test_verify_fingerprint_mismatch(template, scans, capsys):
    assert main(["verify", str(template), str(scans / "room.ply"), "--voxel-size", "0.12"]) == 2
    assert "fingerprint" in capsys.readouterr().err


def test_verify_bad_template(tmp_path, scans):
    (tmp_path / "bad.issr").write_bytes(b"NOPE" + bytes(100))
    assert main(["verify", str(tmp_path / "bad.issr"), str(scans / "room.ply")]) == 2


def test_keypoints_export(scans, tmp_path):
    assert main(["keypoints", str(scans / "room.ply"), "--out", str(tmp_path / "k.ply")]) == 0
    assert 10 <= len(load_ply(tmp_path / "k.ply")) < 1000
    assert main(["keypoints", str(scans / "room.ply"), "--out", str(tmp_path / "d.ply"),
                 "--profile", "dense", "--format", "ascii"]) == 0
    assert len(load_ply(tmp_path / "d.ply")) > len(load_ply(tmp_path / "k.ply"))


def test_eval_manifest(scans, tmp_path, capsys):
    t = RigidTransform.from_axis_angle((0, 0, 1), 0.3, (0.4, 0.0, 0.0))
    save_ply(PointCloud(t.apply(load_ply(scans / "room.ply").points)), tmp_path / "moved.ply")
    rows = [(scans / "room.ply", tmp_path / "moved.ply", 1, "g0"),
            (scans / "other.ply", scans / "other.ply", 1, "g1"),
            (scans / "room.ply", scans / "other.ply", 0, "i0"),
            (scans / "other.ply", scans / "room.ply", 0, "i1")]
    with open(tmp_path / "m.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["template_path", "probe_path", "is_genuine", "label"])
        w.writerows(rows)
    code = main(["eval", str(tmp_path / "m.csv"), "--report", str(tmp_path / "r.csv"),
                 "--scores", str(tmp_path / "s.csv")])
    out = capsys.readouterr().out
    assert code == 0 and "eer: 0.000" in out and "Data reduction rate" in out
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 5


def test_eval_empty_manifest(tmp_path):
    (tmp_path / "m.csv").write_text("template_path,probe_path,is_genuine,label\n")
    assert main(["eval", str(tmp_path / "m.csv")]) == 2


def test_eval_needs_source(tmp_path):
    assert main(["eval"]) == 2


def test_profile_from_environment(monkeypatch):
    monkeypatch.setenv("ROOMAUTH_PROFILE", "kp1")
    args = build_parser().parse_args(["verify", "t", "p"])
    assert config_from_args(args).iss.non_max_radius == 0.3
    args = build_parser().parse_args(["verify", "t", "p", "--profile", "dense"])
    assert config_from_args(args).dense


def test_overlapping_names_prefixed():
    args = build_parser().parse_args(["verify", "t", "p", "--ransac-max-iterations", "10",
                                      "--icp-max-iterations", "7", "--salient-radius", "0.25"])
    c = config_from_args(args)
    assert (c.ransac.max_iterations, c.icp.max_iterations, c.iss.salient_radius) == (10, 7, 0.25)


def test_invalid_override_is_usage_error(scans, tmp_path):
    assert main(["enroll", str(scans / "room.ply"), "--out", str(tmp_path / "t"),
                 "--voxel-size", "-1"]) == 2
