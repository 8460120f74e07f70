"""PLY reader and writer (ASCII and binary little-endian).

Recognized vertex properties are x/y/z, intensity, and nx/ny/nz; anything
else is parsed and ignored. Coordinates are written double precision; the
reader accepts float or double for any property.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import DataError, PlyParseError
from .cloud import PointCloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def load_ply(path: str | Path) -> PointCloud:
    """Load a PLY file into a PointCloud.

    Raises:
        PlyParseError: malformed header or body, naming the offending line.
        DataError: non-finite coordinate, citing the vertex index.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, n_vertex, props, header_lines = _read_header(fh, path)
        names = [p[0] for p in props]
        if not {"x", "y", "z"} <= set(names):
            raise PlyParseError(f"{path}: vertex element lacks x/y/z properties")
        if fmt == "ascii":
            data = _read_ascii_body(fh, n_vertex, props, path, header_lines)
        else:
            dtype = np.dtype([(n, "<" + t) for n, t in props])
            raw = fh.read(dtype.itemsize * n_vertex)
            if len(raw) != dtype.itemsize * n_vertex:
                raise PlyParseError(
                    f"{path}: body truncated, expected {n_vertex} vertices")
            data = np.frombuffer(raw, dtype=dtype)

    pts = np.column_stack([data["x"], data["y"], data["z"]]).astype(np.float64)
    finite = np.isfinite(pts).all(axis=1)
    if not finite.all():
        raise DataError(
            f"{path}: non-finite coordinate at vertex index {int(np.flatnonzero(~finite)[0])}")
    intensity = data["intensity"].astype(np.float64) if "intensity" in names else None
    normals = None
    if {"nx", "ny", "nz"} <= set(names):
        normals = np.column_stack([data["nx"], data["ny"], data["nz"]]).astype(np.float64)
        lengths = np.linalg.norm(normals, axis=1)
        zero = lengths <= 0
        normals[zero] = np.nan
    return PointCloud(points=pts, intensity=intensity, normals=normals)


def _read_header(fh, path):
    def next_line():
        raw = fh.readline()
        if not raw:
            raise PlyParseError(f"{path}: unexpected end of header")
        return raw.decode("ascii", errors="replace").strip()

    magic = next_line()
    if magic != "ply":
        raise PlyParseError(f"{path}: line 1: expected 'ply', got {magic!r}")
    fmt = None
    n_vertex = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    lineno = 1
    while True:
        line = next_line()
        lineno += 1
        if line.startswith("comment") or not line:
            continue
        if line.startswith("format"):
            parts = line.split()
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise PlyParseError(f"{path}: line {lineno}: unsupported format: {line!r}")
            fmt = parts[1]
        elif line.startswith("element"):
            parts = line.split()
            if len(parts) != 3:
                raise PlyParseError(f"{path}: line {lineno}: bad element line: {line!r}")
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                try:
                    n_vertex = int(parts[2])
                except ValueError:
                    raise PlyParseError(
                        f"{path}: line {lineno}: bad vertex count: {line!r}") from None
        elif line.startswith("property"):
            if not in_vertex:
                continue
            parts = line.split()
            if parts[1] == "list":
                raise PlyParseError(
                    f"{path}: line {lineno}: list property unsupported on vertices: {line!r}")
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise PlyParseError(f"{path}: line {lineno}: bad property line: {line!r}")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
        elif line == "end_header":
            break
        else:
            raise PlyParseError(f"{path}: line {lineno}: unrecognized header line: {line!r}")
    if fmt is None:
        raise PlyParseError(f"{path}: missing format line in header")
    if n_vertex is None:
        raise PlyParseError(f"{path}: missing 'element vertex' in header")
    return fmt, n_vertex, props, lineno


def _read_ascii_body(fh, n_vertex, props, path, header_lines):
    dtype = np.dtype([(n, t) for n, t in props])
    out = np.zeros(n_vertex, dtype=dtype)
    for i in range(n_vertex):
        raw = fh.readline()
        if not raw:
            raise PlyParseError(f"{path}: body ends at vertex {i}, expected {n_vertex}")
        parts = raw.split()
        if len(parts) < len(props):
            raise PlyParseError(
                f"{path}: line {header_lines + 1 + i}: "
                f"expected {len(props)} values, got {len(parts)}")
        for (name, _), tok in zip(props, parts):
            try:
                out[name][i] = float(tok)
            except ValueError:
                raise PlyParseError(
                    f"{path}: line {header_lines + 1 + i}: bad value {tok!r}") from None
    return out


def save_ply(
    cloud: PointCloud,
    path: str | Path,
    binary: bool = True,
    extra: Optional[dict[str, np.ndarray]] = None,
) -> None:
    """Write a cloud, optionally with extra int32 per-point properties.

    ``extra`` maps property name to an integer array of length N; used to
    export semantic class codes and instance ids alongside geometry.
    """
    path = Path(path)
    n = len(cloud)
    cols: list[tuple[str, str, np.ndarray]] = [
        ("x", "double", cloud.points[:, 0]),
        ("y", "double", cloud.points[:, 1]),
        ("z", "double", cloud.points[:, 2]),
    ]
    if cloud.intensity is not None:
        cols.append(("intensity", "float", cloud.intensity))
    if cloud.normals is not None:
        normals = np.where(np.isfinite(cloud.normals), cloud.normals, 0.0)
        for axis, name in enumerate(("nx", "ny", "nz")):
            cols.append((name, "float", normals[:, axis]))
    for name, arr in (extra or {}).items():
        arr = np.asarray(arr)
        if arr.shape != (n,):
            raise DataError(f"extra property {name!r} must have length {n}")
        cols.append((name, "int", arr.astype(np.int32)))

    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {n}"]
    header += [f"property {typ} {name}" for name, typ, _ in cols]
    header.append("end_header")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            dtype = np.dtype([(name, "<" + {"double": "f8", "float": "f4", "int": "i4"}[typ])
                              for name, typ, _ in cols])
            rec = np.zeros(n, dtype=dtype)
            for name, _, arr in cols:
                rec[name] = arr
            fh.write(rec.tobytes())
        else:
            mats = [np.asarray(arr) for _, _, arr in cols]
            for i in range(n):
                fh.write((" ".join(repr(float(m[i])) if m.dtype.kind == "f"
                                   else str(int(m[i])) for m in mats) + "\n").encode("ascii"))
