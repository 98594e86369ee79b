import logging

import numpy as np
import pytest

from roomauth.errors import (NonFiniteCoordinateError, PlyError, PlyHeaderError,
                             PlyUnsupportedFormatError)
from roomauth.geometry import PointCloud
from roomauth.ply import load_ply, save_ply


def write(path, text):
    path.write_bytes(text.encode("ascii") if isinstance(text, str) else text)
    return path


def unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_ascii_zero_vertices(tmp_path):
    p = write(tmp_path / "e.ply", "ply\nformat ascii 1.0\nelement vertex 0\n"
              "property float x\nproperty float y\nproperty float z\nend_header\n")
    assert len(load_ply(p)) == 0


def test_ascii_two_vertices_in_order(tmp_path):
    p = write(tmp_path / "t.ply", "ply\nformat ascii 1.0\ncomment hello\nelement vertex 2\n"
              "property float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 2 3\n")
    c = load_ply(p)
    assert np.array_equal(c.points, [[0, 0, 0], [1, 2, 3]]) and c.normals is None


@pytest.mark.parametrize("fmt", ["binary", "ascii"])
def test_round_trip_exact(tmp_path, rng, fmt):
    for n in (1, 1000):
        c = PointCloud(rng.normal(size=(n, 3)) * 100, unit(rng, n))
        save_ply(c, tmp_path / "c.ply", format=fmt)
        back = load_ply(tmp_path / "c.ply")
        assert np.array_equal(back.points, c.points)
        assert np.array_equal(back.normals, c.normals)


def test_round_trip_many_clouds(tmp_path, rng):
    for i in range(1000):
        n = int(rng.integers(0, 20))
        c = PointCloud(rng.uniform(-1e3, 1e3, (n, 3)))
        save_ply(c, tmp_path / "r.ply")
        assert np.array_equal(load_ply(tmp_path / "r.ply").points, c.points)


def test_save_load_save_byte_identical(tmp_path, rng):
    c = PointCloud(rng.normal(size=(300, 3)), unit(rng, 300))
    save_ply(c, tmp_path / "a.ply")
    save_ply(load_ply(tmp_path / "a.ply"), tmp_path / "b.ply")
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()


def test_empty_cloud_written(tmp_path):
    save_ply(PointCloud(np.zeros((0, 3))), tmp_path / "e.ply")
    assert b"element vertex 0" in (tmp_path / "e.ply").read_bytes()
    assert len(load_ply(tmp_path / "e.ply")) == 0


def test_normals_schema(tmp_path, rng):
    save_ply(PointCloud(np.zeros((2, 3)), unit(rng, 2)), tmp_path / "n.ply", format="ascii")
    text = (tmp_path / "n.ply").read_text()
    assert "property double nx" in text and "property double nz" in text
    save_ply(PointCloud(np.zeros((2, 3))), tmp_path / "p.ply", format="ascii")
    assert "nx" not in (tmp_path / "p.ply").read_text()


def test_float32_binary_with_extra_properties(tmp_path):
    dt = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"),
                   ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4")])
    rows = np.array([(1.5, 2.5, 3.5, 7, 0.0, 0.6, 0.8), (0, 0, 0, 1, 1.0, 0.0, 0.0)], dtype=dt)
    head = ("ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\n"
            "property float y\nproperty float z\nproperty uchar red\nproperty float nx\n"
            "property float ny\nproperty float nz\nend_header\n").encode()
    c = load_ply(write(tmp_path / "f.ply", head + rows.tobytes()))
    assert np.array_equal(c.points, [[1.5, 2.5, 3.5], [0, 0, 0]])
    assert np.allclose(np.linalg.norm(c.normals, axis=1), 1.0, atol=1e-12)


def test_other_elements_skipped_with_warning(tmp_path, caplog):
    text = ("ply\nformat ascii 1.0\nelement camera 1\nproperty float f\n"
            "element vertex 1\nproperty float x\nproperty float y\nproperty float z\n"
            "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
            "3.0\n1 2 3\n3 0 0 0\n")
    with caplog.at_level(logging.WARNING):
        c = load_ply(write(tmp_path / "o.ply", text))
    assert np.array_equal(c.points, [[1, 2, 3]])
    assert "camera" in caplog.text


def test_big_endian_rejected(tmp_path):
    p = write(tmp_path / "b.ply", "ply\nformat binary_big_endian 1.0\nelement vertex 0\n"
              "property float x\nproperty float y\nproperty float z\nend_header\n")
    with pytest.raises(PlyUnsupportedFormatError):
        load_ply(p)


@pytest.mark.parametrize("text", [
    "not a ply\n",
    "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n1 2\n",
    "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n",
    "ply\nformat ascii 1.0\nelement vertex 1\nproperty int x\nproperty int y\nproperty int z\n"
    "end_header\n1 2 3\n",
])
def test_malformed_header(tmp_path, text):
    with pytest.raises(PlyHeaderError):
        load_ply(write(tmp_path / "m.ply", text))


def test_non_finite_rejected(tmp_path):
    p = write(tmp_path / "n.ply", "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n"
              "property float y\nproperty float z\nend_header\n1 nan 3\n")
    with pytest.raises(NonFiniteCoordinateError):
        load_ply(p)


def test_error_kinds_distinct():
    assert not issubclass(PlyUnsupportedFormatError, PlyHeaderError)
    assert not issubclass(NonFiniteCoordinateError, PlyHeaderError)


def test_truncated_binary(tmp_path):
    head = ("ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty double x\n"
            "property double y\nproperty double z\nend_header\n").encode()
    with pytest.raises(PlyError):
        load_ply(write(tmp_path / "t.ply", head + b"\0" * 30))
