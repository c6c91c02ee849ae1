"""Point-cloud file I/O: PLY (text and binary little-endian) and bare xyz text.

Only vertex positions are used; extra per-vertex properties are read past
and dropped.  Parsing is fail-closed: a malformed header or truncated
payload raises ParseError and never yields a partial cloud.
"""

from __future__ import annotations

import numpy as np

from .errors import ParseError, UnsupportedError
from .voxel import as_point_array

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


def _parse_ply_header(data: bytes):
    end = data.find(b"end_header")
    if end < 0:
        raise ParseError("PLY header has no end_header")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise ParseError("PLY end_header line not terminated")
    body = data[nl + 1:]
    lines = data[:nl].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements = []  # (name, count, [(dtype, prop_name) | ("list", ...)])
    for ln_no, raw in enumerate(lines[1:], start=2):
        parts = raw.strip().split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if len(parts) < 2:
                raise ParseError(f"line {ln_no}: malformed format line")
            if parts[1] == "ascii":
                fmt = "ascii"
            elif parts[1] == "binary_little_endian":
                fmt = "binary"
            elif parts[1] == "binary_big_endian":
                raise UnsupportedError("big-endian PLY is not supported")
            else:
                raise ParseError(f"line {ln_no}: unknown format {parts[1]!r}")
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise ParseError(f"line {ln_no}: malformed element line")
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise ParseError(f"line {ln_no}: property before any element")
            if parts[1] == "list":
                if len(parts) != 5:
                    raise ParseError(f"line {ln_no}: malformed list property")
                elements[-1][2].append(("list", parts[2], parts[3], parts[4]))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise ParseError(f"line {ln_no}: malformed property line")
                elements[-1][2].append((_PLY_TYPES[parts[1]], parts[2]))
        elif parts[0] == "end_header":
            break
        else:
            raise ParseError(f"line {ln_no}: unexpected header token {parts[0]!r}")
    if fmt is None:
        raise ParseError("PLY header is missing the format line")
    return fmt, elements, body


def _read_ply(data: bytes) -> np.ndarray:
    fmt, elements, body = _parse_ply_header(data)
    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise ParseError("PLY has no vertex element")
    if any(p[0] == "list" for p in vertex[2]):
        raise UnsupportedError("list properties inside the vertex element")
    names = [p[1] for p in vertex[2]]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise ParseError(f"vertex element lacks property {axis!r}")
        if vertex[2][names.index(axis)][0] not in ("f4", "f8"):
            raise ParseError(f"vertex property {axis!r} must be float or double")

    before = elements[: elements.index(vertex)]
    if fmt == "binary":
        offset = 0
        for _name, count, props in before:
            if any(p[0] == "list" for p in props):
                raise UnsupportedError("list properties before the vertex element (binary)")
            offset += count * sum(np.dtype("<" + p[0]).itemsize for p in props)
        dt = np.dtype([(f"p{i}", "<" + p[0]) for i, p in enumerate(vertex[2])])
        need = offset + vertex[1] * dt.itemsize
        if len(body) < need:
            raise ParseError("binary PLY payload truncated")
        rows = np.frombuffer(body, dtype=dt, count=vertex[1], offset=offset)
        cols = [rows[f"p{names.index(ax)}"].astype(np.float64) for ax in ("x", "y", "z")]
        return np.stack(cols, axis=1)

    lines = body.split(b"\n")
    ln = 0
    for _name, count, props in before:
        if any(p[0] == "list" for p in props):
            ln += count  # one list per line; skip the rows wholesale
        else:
            ln += count
    xi, yi, zi = (names.index(ax) for ax in ("x", "y", "z"))
    out = np.empty((vertex[1], 3), dtype=np.float64)
    for row in range(vertex[1]):
        while ln < len(lines) and not lines[ln].strip():
            ln += 1
        if ln >= len(lines):
            raise ParseError("text PLY payload truncated")
        parts = lines[ln].split()
        if len(parts) < len(names):
            raise ParseError(f"vertex row {row}: expected {len(names)} values")
        try:
            out[row] = (float(parts[xi]), float(parts[yi]), float(parts[zi]))
        except ValueError as exc:
            raise ParseError(f"vertex row {row}: {exc}") from exc
        ln += 1
    return out


def _read_xyz(data: bytes) -> np.ndarray:
    rows = []
    for ln_no, raw in enumerate(data.split(b"\n"), start=1):
        line = raw.strip()
        if not line or line.startswith(b"#"):
            continue
        parts = line.split()
        if len(parts) < 3:
            raise ParseError(f"line {ln_no}: expected at least 3 coordinates")
        try:
            rows.append((float(parts[0]), float(parts[1]), float(parts[2])))
        except ValueError as exc:
            raise ParseError(f"line {ln_no}: {exc}") from exc
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def read_points(path) -> np.ndarray:
    """Load points from a PLY or whitespace-separated xyz text file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] in (b"ply\n", b"ply\r"):
        return _read_ply(data)
    return _read_xyz(data)


def write_points(points, path, fmt: str = "binary") -> None:
    """Write points as binary PLY (float32), text PLY, or xyz text."""
    pts = as_point_array(points)
    if fmt == "binary":
        header = (
            "ply\nformat binary_little_endian 1.0\n"
            f"element vertex {len(pts)}\n"
            "property float x\nproperty float y\nproperty float z\n"
            "end_header\n"
        )
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(np.ascontiguousarray(pts, dtype="<f4").tobytes())
    elif fmt == "text":
        with open(path, "w") as fh:
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(pts)}\n")
            fh.write("property float x\nproperty float y\nproperty float z\n")
            fh.write("end_header\n")
            for x, y, z in pts:
                fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
    elif fmt == "xyz":
        with open(path, "w") as fh:
            for x, y, z in pts:
                fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
    else:
        raise UnsupportedError(f"unknown output format {fmt!r}")
