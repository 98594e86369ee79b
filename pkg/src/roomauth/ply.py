"""Minimal PLY reader/writer for point clouds.

Reads the ``vertex`` element (``x, y, z`` and optional ``nx, ny, nz``) from
ASCII or binary little-endian files; other elements are skipped with a
warning. Writes float64 coordinates so a save/load round trip is exact.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import BinaryIO, Literal

import numpy as np

from .errors import NonFiniteCoordinateError, PlyError, PlyHeaderError, PlyUnsupportedFormatError
from .geometry import PointCloud

log = logging.getLogger(__name__)

_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_FLOATS = {"f4", "f8"}


@dataclass
class _Element:
    name: str
    count: int
    # (name, dtype) for scalars; (name, count dtype, item dtype) for lists
    props: list[tuple] = field(default_factory=list)

    @property
    def has_lists(self) -> bool:
        return any(len(p) == 3 for p in self.props)


def _read_header(fh: BinaryIO) -> tuple[str, list[_Element]]:
    first = fh.readline()
    if first.strip() != b"ply":
        raise PlyHeaderError("missing 'ply' magic line")
    fmt = None
    elements: list[_Element] = []
    while True:
        raw = fh.readline()
        if not raw:
            raise PlyHeaderError("header not terminated by end_header")
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError as exc:
            raise PlyHeaderError("non-ASCII header line") from exc
        if not line or line.startswith(("comment", "obj_info")):
            continue
        if line == "end_header":
            break
        tok = line.split()
        if tok[0] == "format":
            if len(tok) != 3:
                raise PlyHeaderError(f"bad format line: {line!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise PlyHeaderError(f"bad element line: {line!r}")
            elements.append(_Element(tok[1], int(tok[2])))
        elif tok[0] == "property":
            if not elements:
                raise PlyHeaderError("property before any element")
            if tok[1] == "list":
                if len(tok) != 5 or tok[2] not in _TYPES or tok[3] not in _TYPES:
                    raise PlyHeaderError(f"bad list property: {line!r}")
                elements[-1].props.append((tok[4], _TYPES[tok[2]], _TYPES[tok[3]]))
            else:
                if len(tok) != 3 or tok[1] not in _TYPES:
                    raise PlyHeaderError(f"bad property line: {line!r}")
                elements[-1].props.append((tok[2], _TYPES[tok[1]]))
        else:
            raise PlyHeaderError(f"unknown header keyword {tok[0]!r}")
    if fmt is None:
        raise PlyHeaderError("missing format line")
    if fmt == "binary_big_endian":
        raise PlyUnsupportedFormatError("binary_big_endian PLY is not supported")
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyHeaderError(f"unknown format {fmt!r}")
    return fmt, elements


def _skip_binary(fh: BinaryIO, el: _Element) -> None:
    if not el.has_lists:
        size = np.dtype([(p[0], "<" + p[1]) for p in el.props]).itemsize
        fh.seek(size * el.count, os.SEEK_CUR)
        return
    for _ in range(el.count):
        for p in el.props:
            if len(p) == 2:
                fh.seek(np.dtype(p[1]).itemsize, os.SEEK_CUR)
            else:
                n = int(np.frombuffer(fh.read(np.dtype(p[1]).itemsize), "<" + p[1])[0])
                fh.seek(n * np.dtype(p[2]).itemsize, os.SEEK_CUR)


def load_ply(path: str | os.PathLike) -> PointCloud:
    with open(path, "rb") as fh:
        fmt, elements = _read_header(fh)
        vertex = next((e for e in elements if e.name == "vertex"), None)
        if vertex is None:
            raise PlyHeaderError("no vertex element")
        names = {p[0]: p for p in vertex.props}
        for axis in "xyz":
            if axis not in names or len(names[axis]) != 2 or names[axis][1] not in _FLOATS:
                raise PlyHeaderError(f"vertex property {axis!r} missing or not float/double")
        if vertex.has_lists:
            raise PlyUnsupportedFormatError("list properties on vertex are not supported")
        with_normals = all(n in names and len(names[n]) == 2 for n in ("nx", "ny", "nz"))

        if fmt == "ascii":
            data = _load_ascii(fh, elements, vertex)
        else:
            data = None
            for el in elements:
                if el is vertex:
                    dt = np.dtype([(p[0], "<" + p[1]) for p in el.props])
                    buf = fh.read(dt.itemsize * el.count)
                    if len(buf) != dt.itemsize * el.count:
                        raise PlyError("file truncated inside vertex data")
                    data = np.frombuffer(buf, dtype=dt)
                    break
                log.warning("skipping PLY element %r", el.name)
                _skip_binary(fh, el)

    pts = np.column_stack([data[a].astype(np.float64) for a in "xyz"]) if len(data) else np.zeros((0, 3))
    if not np.all(np.isfinite(pts)):
        raise NonFiniteCoordinateError("non-finite vertex coordinate")
    normals = None
    if with_normals and len(pts):
        normals = np.column_stack([data[a].astype(np.float64) for a in ("nx", "ny", "nz")])
        lengths = np.linalg.norm(normals, axis=1)
        # float32 files store normals that are only approximately unit length
        fix = (lengths > 0) & (np.abs(lengths - 1.0) > 1e-6)
        normals[fix] /= lengths[fix, None]
    elif with_normals:
        normals = np.zeros((0, 3))
    return PointCloud(pts, normals)


def _load_ascii(fh: BinaryIO, elements: list[_Element], vertex: _Element) -> np.ndarray:
    for el in elements:
        if el is vertex:
            rows = [fh.readline().split() for _ in range(el.count)]
            width = len(el.props)
            if any(len(r) != width for r in rows):
                raise PlyError("vertex line with wrong number of values (or truncated file)")
            dt = np.dtype([(p[0], p[1]) for p in el.props])
            out = np.empty(el.count, dtype=dt)
            if el.count:
                try:
                    table = np.array(rows, dtype=np.float64)
                except ValueError as exc:
                    raise PlyError("unparseable vertex value") from exc
                for j, p in enumerate(el.props):
                    out[p[0]] = table[:, j]
            return out
        log.warning("skipping PLY element %r", el.name)
        for _ in range(el.count):
            fh.readline()
    raise PlyHeaderError("no vertex element")


def save_ply(cloud: PointCloud, path: str | os.PathLike,
             format: Literal["ascii", "binary"] = "binary") -> None:
    if format not in ("ascii", "binary"):
        raise ValueError("format must be 'ascii' or 'binary'")
    fields = ["x", "y", "z"]
    cols = [cloud.points]
    if cloud.normals is not None:
        fields += ["nx", "ny", "nz"]
        cols.append(cloud.normals)
    table = np.hstack(cols) if len(cloud) else np.zeros((0, len(fields)))
    header = ["ply", "format " + ("ascii 1.0" if format == "ascii" else "binary_little_endian 1.0"),
              f"element vertex {len(cloud)}"]
    header += [f"property double {f}" for f in fields]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if format == "binary":
            fh.write(np.ascontiguousarray(table, dtype="<f8").tobytes())
        else:
            for row in table:
                fh.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))
