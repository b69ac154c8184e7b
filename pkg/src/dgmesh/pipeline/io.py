"""PLY / OBJ / track file input and output.

Floats are written with 9 significant digits (``%.9g``) so output bytes depend only
on the values. Parse errors report the byte offset where the problem was found.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from ..core import OrientedPointCloud
from ..errors import DGMeshError, FileNotFound, IoError, MalformedHeader, MissingProperty, TruncatedBody
from ..isosurface import TriMesh

_PLY_TYPES = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}  # fmt: skip
_REQUIRED = ("x", "y", "z", "nx", "ny", "nz")


def _fmt(v: float) -> str:
    return "%.9g" % v


def _write_bytes(path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}", path=str(path)) from exc


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise FileNotFound(f"file not found: {path}", path=str(path)) from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror}", path=str(path)) from exc


# ---------------------------------------------------------------------------
# PLY


class _Element:
    def __init__(self, name: str, count: int):
        self.name = name
        self.count = count
        self.props: list[tuple] = []  # (name, type) or (name, ("list", count_type, item_type))


def _parse_header(data: bytes):
    if not data.startswith(b"ply\n") and not data.startswith(b"ply\r\n"):
        raise MalformedHeader("missing 'ply' magic", offset=0)
    end = data.find(b"end_header")
    if end < 0:
        raise MalformedHeader("no end_header line", offset=len(data))
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    fmt = None
    elements: list[_Element] = []
    offset = 0
    for raw in data[:body_start].split(b"\n"):
        line = raw.decode("ascii", errors="replace").strip()
        words = line.split()
        here = offset
        offset += len(raw) + 1
        if not words or words[0] in ("ply", "comment", "obj_info", "end_header"):
            continue
        if words[0] == "format":
            if len(words) != 3 or words[1] not in ("ascii", "binary_little_endian"):
                raise MalformedHeader(f"unsupported format line {line!r}", offset=here)
            fmt = words[1]
        elif words[0] == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise MalformedHeader(f"bad element line {line!r}", offset=here)
            elements.append(_Element(words[1], int(words[2])))
        elif words[0] == "property":
            if not elements:
                raise MalformedHeader("property before any element", offset=here)
            if len(words) == 5 and words[1] == "list":
                if words[2] not in _PLY_TYPES or words[3] not in _PLY_TYPES:
                    raise MalformedHeader(f"bad list property {line!r}", offset=here)
                elements[-1].props.append((words[4], ("list", words[2], words[3])))
            elif len(words) == 3 and words[1] in _PLY_TYPES:
                elements[-1].props.append((words[2], words[1]))
            else:
                raise MalformedHeader(f"bad property line {line!r}", offset=here)
        else:
            raise MalformedHeader(f"unknown header keyword {words[0]!r}", offset=here)
    if fmt is None:
        raise MalformedHeader("no format line", offset=0)
    return fmt, elements, body_start


def _read_ascii(data: bytes, elements, start: int) -> dict:
    out = {}
    pos = start
    n = len(data)
    for el in elements:
        rows = []
        for _ in range(el.count):
            while pos < n and data[pos : pos + 1] in (b"\n", b"\r", b" "):
                pos += 1
            if pos >= n:
                raise TruncatedBody(f"element {el.name!r} ends after {len(rows)} of {el.count} rows", offset=pos)
            nl = data.find(b"\n", pos)
            nl = n if nl < 0 else nl
            tokens = data[pos:nl].split()
            values = []
            k = 0
            try:
                for _, ptype in el.props:
                    if isinstance(ptype, tuple):
                        cnt = int(tokens[k])
                        values.append([float(v) for v in tokens[k + 1 : k + 1 + cnt]])
                        if len(values[-1]) != cnt:
                            raise IndexError
                        k += 1 + cnt
                    else:
                        values.append(float(tokens[k]))
                        k += 1
            except (IndexError, ValueError) as exc:
                raise TruncatedBody(f"row of element {el.name!r} is incomplete or unparsable", offset=pos) from exc
            rows.append(values)
            pos = nl + 1
        out[el.name] = rows
    return out


def _read_binary(data: bytes, elements, start: int) -> dict:
    out = {}
    pos = start
    for el in elements:
        scalar_only = all(not isinstance(t, tuple) for _, t in el.props)
        if scalar_only:
            dtype = np.dtype([(name, "<" + _PLY_TYPES[t]) for name, t in el.props])
            need = dtype.itemsize * el.count
            if pos + need > len(data):
                have = (len(data) - pos) // max(dtype.itemsize, 1)
                raise TruncatedBody(
                    f"element {el.name!r} ends after {have} of {el.count} rows", offset=pos + have * dtype.itemsize
                )
            arr = np.frombuffer(data, dtype=dtype, count=el.count, offset=pos)
            out[el.name] = [[float(arr[name][i]) for name, _ in el.props] for i in range(el.count)]
            pos += need
            continue
        rows = []
        for r in range(el.count):
            row_start = pos
            values = []
            try:
                for _, ptype in el.props:
                    if isinstance(ptype, tuple):
                        _, ct, it = ptype
                        (cnt,) = struct.unpack_from("<" + _PLY_TYPES[ct], data, pos)
                        pos += struct.calcsize(_PLY_TYPES[ct])
                        fmt = "<%d%s" % (cnt, _PLY_TYPES[it])
                        values.append([float(v) for v in struct.unpack_from(fmt, data, pos)])
                        pos += struct.calcsize(fmt)
                    else:
                        (v,) = struct.unpack_from("<" + _PLY_TYPES[ptype], data, pos)
                        values.append(float(v))
                        pos += struct.calcsize(_PLY_TYPES[ptype])
            except struct.error as exc:
                raise TruncatedBody(f"element {el.name!r} ends after {r} of {el.count} rows", offset=row_start) from exc
            rows.append(values)
        out[el.name] = rows
    return out


def read_ply(path):
    """Parse a PLY file into (elements, body) where body maps element name -> rows."""
    data = _read_bytes(path)
    fmt, elements, start = _parse_header(data)
    body = _read_ascii(data, elements, start) if fmt == "ascii" else _read_binary(data, elements, start)
    return elements, body


def import_ply(path) -> OrientedPointCloud:
    elements, body = read_ply(path)
    vertex = next((el for el in elements if el.name == "vertex"), None)
    if vertex is None:
        raise MissingProperty("no vertex element", offset=0)
    names = [n for n, _ in vertex.props]
    missing = [p for p in _REQUIRED if p not in names]
    if missing:
        raise MissingProperty(f"vertex element lacks {', '.join(missing)}", offset=0)
    rows = np.array(body["vertex"], dtype=float).reshape(-1, len(names))
    cols = [names.index(p) for p in _REQUIRED]
    pos, nrm = rows[:, cols[:3]], rows[:, cols[3:]]
    lengths = np.linalg.norm(nrm, axis=1)
    if np.any(lengths == 0):
        raise DGMeshError("zero-length normal in PLY input")
    # leave already-unit normals untouched so export/import round trips are bit-exact
    unit = np.abs(lengths - 1.0) <= 1e-12
    return OrientedPointCloud(pos, np.where(unit[:, None], nrm, nrm / lengths[:, None]))


def export_ply(cloud: OrientedPointCloud, path, binary: bool = True) -> None:
    """Point cloud PLY with double x,y,z,nx,ny,nz properties."""
    n = len(cloud)
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {n}"]
    header += [f"property double {p}" for p in _REQUIRED]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    table = np.concatenate([cloud.positions, cloud.normals], axis=1)
    if binary:
        body = np.ascontiguousarray(table, dtype="<f8").tobytes()
    else:
        body = "".join(" ".join(_fmt(v) for v in row) + "\n" for row in table).encode("ascii")
    _write_bytes(path, head + body)


# ---------------------------------------------------------------------------
# meshes


def mesh_to_obj(mesh: TriMesh) -> bytes:
    lines = ["v " + " ".join(_fmt(c) for c in v) for v in mesh.vertices]
    lines += ["f " + " ".join(str(int(i) + 1) for i in f) for f in mesh.faces]
    return "".join(line + "\n" for line in lines).encode("ascii")


def mesh_to_ply(mesh: TriMesh) -> bytes:
    header = ["ply", "format ascii 1.0"]
    header += [f"element vertex {mesh.n_vertices}", "property double x", "property double y", "property double z"]
    header += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices", "end_header"]
    lines = header + [" ".join(_fmt(c) for c in v) for v in mesh.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in f) for f in mesh.faces]
    return "".join(line + "\n" for line in lines).encode("ascii")


def export_mesh(mesh: TriMesh, path, format: str | None = None) -> None:
    fmt = (format or Path(path).suffix.lstrip(".")).lower()
    if fmt == "obj":
        _write_bytes(path, mesh_to_obj(mesh))
    elif fmt == "ply":
        _write_bytes(path, mesh_to_ply(mesh))
    else:
        raise DGMeshError(f"unknown mesh format {fmt!r}; expected obj or ply")


def _parse_obj(data: bytes, path) -> TriMesh:
    verts, faces = [], []
    offset = 0
    for raw in data.split(b"\n"):
        here = offset
        offset += len(raw) + 1
        words = raw.split()
        if not words or words[0].startswith(b"#"):
            continue
        try:
            if words[0] == b"v":
                verts.append([float(w) for w in words[1:4]])
                if len(verts[-1]) != 3:
                    raise ValueError
            elif words[0] == b"f":
                idx = [int(w.split(b"/")[0]) for w in words[1:]]
                if len(idx) < 3:
                    raise ValueError
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                # fan-triangulate polygons
                faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
        except ValueError as exc:
            raise MalformedHeader(f"bad OBJ line {raw[:40]!r}", offset=here) from exc
    return TriMesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def import_mesh(path) -> TriMesh:
    path = Path(path)
    data = _read_bytes(path)
    if path.suffix.lower() == ".obj":
        return _parse_obj(data, path)
    if path.suffix.lower() == ".ply":
        elements, body = read_ply(path)
        vertex = next((el for el in elements if el.name == "vertex"), None)
        if vertex is None:
            raise MissingProperty("no vertex element", offset=0)
        names = [n for n, _ in vertex.props]
        if any(p not in names for p in "xyz"):
            raise MissingProperty("vertex element lacks x, y or z", offset=0)
        rows = np.array(body["vertex"], dtype=float).reshape(-1, len(names))
        verts = rows[:, [names.index(p) for p in "xyz"]]
        faces = []
        for row in body.get("face", []):
            idx = [int(i) for i in row[0]]
            faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
        return TriMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))
    raise DGMeshError(f"unknown mesh format {path.suffix!r}; expected .obj or .ply")


# ---------------------------------------------------------------------------
# tracks

TRACK_HEADER = "id,frame,t,x,y,z,face_index,alive"


def tracks_to_text(tracks) -> str:
    """Tracks as CSV text, one record per (gaussian id, frame), sorted by (id, frame)."""
    records = []
    for tr in tracks:
        for rec in tr.records:
            records.append((tr.id, rec.frame, rec.t, rec.position, rec.face, rec.alive))
    records.sort(key=lambda r: (r[0], r[1]))
    lines = [TRACK_HEADER]
    for gid, frame, t, p, face, alive in records:
        lines.append(f"{gid},{frame},{_fmt(t)},{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])},{face},{'true' if alive else 'false'}")
    return "\n".join(lines) + "\n"


def export_tracks(tracks, path) -> None:
    _write_bytes(path, tracks_to_text(tracks).encode("ascii"))


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create directory {path}: {exc.strerror}", path=str(path)) from exc
    return path
