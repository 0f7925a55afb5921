"""Low-level PLY / OBJ readers and writers.

Only the subset of PLY needed here is supported: a ``vertex`` element with
scalar properties (float/double/uchar/int) and a ``face`` element with a
single ``vertex_indices`` list property holding triangles.  Both ascii and
binary_little_endian files are handled.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

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

_INV_PLY_TYPES = {
    "u1": "uchar", "i4": "int", "f4": "float", "f8": "double",
    "i1": "char", "i2": "short", "u2": "ushort", "u4": "uint",
}


class PlyParseError(ValueError):
    pass


def _parse_header(fh):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise PlyParseError("not a PLY file (missing 'ply' magic)")
    fmt = None
    elements = []  # list of (name, count, [(prop_name, dtype_or_list_spec)])
    while True:
        line = fh.readline()
        if not line:
            raise PlyParseError("unexpected EOF in PLY header")
        tokens = line.decode("ascii").strip().split()
        if not tokens:
            continue
        if tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise PlyParseError(f"unsupported PLY format '{fmt}'")
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise PlyParseError("property before element in header")
            if tokens[1] == "list":
                count_t, item_t, name = tokens[2], tokens[3], tokens[4]
                elements[-1][2].append((name, ("list", _PLY_TYPES[count_t], _PLY_TYPES[item_t])))
            else:
                elements[-1][2].append((tokens[2], _PLY_TYPES[tokens[1]]))
        elif tokens[0] == "end_header":
            break
    if fmt is None:
        raise PlyParseError("PLY header missing format line")
    return fmt, elements


def read_ply(path):
    """Read a triangle-mesh PLY file.

    Returns (vertices, faces, props) where vertices is (V, 3) float64,
    faces is (F, 3) int64 and props maps each extra per-vertex property
    name to its raw 1-D array.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, elements = _parse_header(fh)
        data = {}
        for name, count, props in elements:
            if any(isinstance(p[1], tuple) for p in props):
                data[name] = _read_list_element(fh, fmt, count, props)
            else:
                dtype = np.dtype([(p, "<" + t) for p, t in props])
                if fmt == "ascii":
                    rows = [fh.readline().split() for _ in range(count)]
                    arr = np.zeros(count, dtype=dtype)
                    for j, (p, _) in enumerate(props):
                        arr[p] = np.array([r[j] for r in rows], dtype=dtype[p])
                else:
                    arr = np.frombuffer(fh.read(count * dtype.itemsize), dtype=dtype, count=count)
                data[name] = arr

    if "vertex" not in data:
        raise PlyParseError("PLY file has no vertex element")
    vdata = data["vertex"]
    for c in ("x", "y", "z"):
        if c not in vdata.dtype.names:
            raise PlyParseError(f"vertex element missing '{c}' property")
    V = len(vdata)
    vertices = np.column_stack([vdata["x"], vdata["y"], vdata["z"]]).astype(np.float64)
    props = {n: np.array(vdata[n]) for n in vdata.dtype.names if n not in ("x", "y", "z")}

    faces = data.get("face")
    if faces is None:
        faces = np.zeros((0, 3), dtype=np.int64)
    return vertices, faces.astype(np.int64), props


def _read_list_element(fh, fmt, count, props):
    """Read a face element (single triangle list property)."""
    if len(props) != 1 or not isinstance(props[0][1], tuple):
        raise PlyParseError("face element must have exactly one list property")
    _, count_t, item_t = props[0][1]
    rows = np.zeros((count, 3), dtype=np.int64)
    if fmt == "ascii":
        for i in range(count):
            tok = fh.readline().split()
            n = int(tok[0])
            if n != 3:
                raise PlyParseError(f"face {i} has {n} vertices; only triangles supported")
            rows[i] = [int(t) for t in tok[1:4]]
    else:
        csize = np.dtype(count_t).itemsize
        isize = np.dtype(item_t).itemsize
        for i in range(count):
            n = int(np.frombuffer(fh.read(csize), dtype="<" + count_t)[0])
            if n != 3:
                raise PlyParseError(f"face {i} has {n} vertices; only triangles supported")
            rows[i] = np.frombuffer(fh.read(3 * isize), dtype="<" + item_t)
    return rows


def write_ply(path, vertices, faces, props=None, binary=True, comments=()):
    """Write a triangle mesh with optional extra per-vertex properties.

    props maps property name -> 1-D array (length V).  Property dtype on
    disk follows the array dtype (float32/float64/uint8/int32).
    """
    path = Path(path)
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    props = props or {}

    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    for name, arr in props.items():
        arr = np.asarray(arr)
        if arr.ndim != 1 or len(arr) != len(vertices):
            raise ValueError(f"property '{name}' must be 1-D with one entry per vertex")
        kind = arr.dtype.str.lstrip("<>|=")
        if kind not in _INV_PLY_TYPES:
            raise ValueError(f"property '{name}' has unsupported dtype {arr.dtype}")
        fields.append((name, "<" + kind))

    vdata = np.zeros(len(vertices), dtype=np.dtype(fields))
    vdata["x"], vdata["y"], vdata["z"] = vertices[:, 0], vertices[:, 1], vertices[:, 2]
    for name, arr in props.items():
        vdata[name] = arr

    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    for c in comments:
        header.append(f"comment {c}")
    header.append(f"element vertex {len(vertices)}")
    for name, t in fields:
        header.append(f"property {_INV_PLY_TYPES[t.lstrip('<')]} {name}")
    header.append(f"element face {len(faces)}")
    header.append("property list uchar int vertex_indices")
    header.append("end_header")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(vdata.tobytes())
            fdata = np.zeros(len(faces), dtype=np.dtype([("n", "u1"), ("v", "<i4", (3,))]))
            fdata["n"] = 3
            fdata["v"] = faces
            fh.write(fdata.tobytes())
        else:
            for row in vdata:
                fh.write((" ".join(_fmt_ascii(row[n], t) for n, t in fields) + "\n").encode("ascii"))
            for f in faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode("ascii"))


def _fmt_ascii(value, dtype_str):
    if dtype_str.endswith(("f4", "f8")):
        return repr(float(value))
    return str(int(value))


def read_obj(path):
    """Read vertices and triangle faces from an OBJ file (geometry only)."""
    vertices, faces = [], []
    with open(path) as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                vertices.append([float(t) for t in tok[1:4]])
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) - 1 for t in tok[1:]]
                if len(idx) != 3:
                    raise ValueError("only triangle faces are supported in OBJ input")
                faces.append(idx)
    return np.asarray(vertices, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def read_attribute_sidecar(path, n_vertices):
    """Read per-vertex attributes from a JSON sidecar (name -> list per vertex)."""
    with open(path) as fh:
        raw = json.load(fh)
    attrs = {}
    for name, values in raw.items():
        arr = np.asarray(values, dtype=np.float64)
        if len(arr) != n_vertices:
            raise ValueError(
                f"sidecar attribute '{name}' has {len(arr)} entries for {n_vertices} vertices")
        attrs[name] = arr
    return attrs
