"""Triangle mesh container, half-edge connectivity and differential quantities.

Pipeline meshes are closed, orientable, genus-zero 2-manifolds.  Per-vertex
data (color channels, material measurements, labels) live in named attribute
channels alongside the geometry.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import plyio

# Channels persisted as individual float PLY properties.
SCALAR_CHANNELS = ("hue", "saturation", "value", "concentration", "composition",
                   "curvature", "concentration_filtered")
COLOR_CHANNEL = "bispectral_rgb"
SPHERE_CHANNEL = "sphere_pos"


class MeshTopologyError(ValueError):
    """Mesh violates the closed genus-zero manifold contract."""

    def __init__(self, message, offending_edges=None):
        super().__init__(message)
        self.offending_edges = offending_edges or []


class Mesh:
    """Triangle mesh with named per-vertex attribute channels.

    Parameters
    ----------
    vertices : (V, 3) float array of positions.
    faces : (F, 3) int array of vertex indices, consistently oriented.
    attributes : optional dict of name -> (V,) or (V, k) arrays.
    """

    def __init__(self, vertices, faces, attributes=None, metadata=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be (V, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError("faces must be (F, 3)")
        if len(self.faces) and self.faces.max() >= len(self.vertices):
            raise ValueError("face index exceeds vertex count")
        if len(self.faces) and self.faces.min() < 0:
            raise ValueError("negative face index")
        degen = (self.faces[:, 0] == self.faces[:, 1]) \
            | (self.faces[:, 1] == self.faces[:, 2]) \
            | (self.faces[:, 2] == self.faces[:, 0])
        if degen.any():
            raise ValueError(f"degenerate faces (repeated vertex): {np.nonzero(degen)[0][:10].tolist()}")
        self.attributes = {}
        self.metadata = dict(metadata or {})
        for name, arr in (attributes or {}).items():
            self.set_attribute(name, arr)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def set_attribute(self, name, values):
        arr = np.asarray(values)
        if len(arr) != self.n_vertices:
            raise ValueError(
                f"attribute '{name}' has {len(arr)} entries, expected {self.n_vertices}")
        self.attributes[name] = arr

    def attribute(self, name):
        if name not in self.attributes:
            raise KeyError(f"mesh has no attribute channel '{name}'")
        return self.attributes[name]

    def copy(self):
        return Mesh(self.vertices.copy(), self.faces.copy(),
                    {k: v.copy() for k, v in self.attributes.items()},
                    dict(self.metadata))

    # -- topology ---------------------------------------------------------

    def edges(self):
        """Unique undirected edges as a sorted (E, 2) int array."""
        e = np.vstack([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self):
        return self.n_vertices - len(self.edges()) + self.n_faces

    def validate_closed_genus_zero(self):
        """Raise MeshTopologyError unless the mesh is a closed, oriented,
        genus-zero manifold.  Results are recorded in ``metadata``."""
        directed = np.vstack([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        keys = directed[:, 0] * self.n_vertices + directed[:, 1]
        uniq, counts = np.unique(keys, return_counts=True)
        if (counts > 1).any():
            bad = uniq[counts > 1]
            edges = [(int(k // self.n_vertices), int(k % self.n_vertices)) for k in bad[:20]]
            raise MeshTopologyError(
                f"non-manifold or inconsistently oriented: {len(bad)} duplicated "
                f"directed edges, e.g. {edges[:5]}", offending_edges=edges)

        undirected = directed.copy()
        undirected.sort(axis=1)
        ukeys = undirected[:, 0] * self.n_vertices + undirected[:, 1]
        uuniq, ucounts = np.unique(ukeys, return_counts=True)
        boundary = uuniq[ucounts == 1]
        if len(boundary):
            edges = [(int(k // self.n_vertices), int(k % self.n_vertices)) for k in boundary[:20]]
            raise MeshTopologyError(
                f"mesh is not closed: {len(boundary)} boundary edges, e.g. {edges[:5]}",
                offending_edges=edges)

        chi = self.n_vertices - len(uuniq) + self.n_faces
        if chi != 2:
            raise MeshTopologyError(
                f"genus != 0: Euler characteristic {chi} (expected 2)")
        self.metadata["closed_genus_zero"] = True
        self.metadata["euler_characteristic"] = int(chi)

    # -- differential quantities ------------------------------------------

    def face_areas(self):
        p = self.vertices
        e1 = p[self.faces[:, 1]] - p[self.faces[:, 0]]
        e2 = p[self.faces[:, 2]] - p[self.faces[:, 0]]
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)

    def total_area(self):
        return float(self.face_areas().sum())

    def face_normals(self):
        p = self.vertices
        n = np.cross(p[self.faces[:, 1]] - p[self.faces[:, 0]],
                     p[self.faces[:, 2]] - p[self.faces[:, 0]])
        lens = np.linalg.norm(n, axis=1)
        lens[lens == 0] = 1.0
        return n / lens[:, None]

    def vertex_normals(self):
        """Angle-weighted average of incident face normals (unit vectors)."""
        p = self.vertices
        fn = self.face_normals()
        normals = np.zeros_like(p)
        for k in range(3):
            i = self.faces[:, k]
            a = p[self.faces[:, (k + 1) % 3]] - p[i]
            b = p[self.faces[:, (k + 2) % 3]] - p[i]
            na = np.linalg.norm(a, axis=1)
            nb = np.linalg.norm(b, axis=1)
            cosang = np.einsum("ij,ij->i", a, b) / np.maximum(na * nb, 1e-30)
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            np.add.at(normals, i, ang[:, None] * fn)
        lens = np.linalg.norm(normals, axis=1)
        lens[lens == 0] = 1.0
        return normals / lens[:, None]

    def vertex_areas(self):
        """Barycentric-lumped vertex areas (one third of incident face areas)."""
        fa = self.face_areas()
        va = np.zeros(self.n_vertices)
        for k in range(3):
            np.add.at(va, self.faces[:, k], fa / 3.0)
        return va

    def mean_edge_length(self):
        e = self.edges()
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())


class HalfEdgeMesh:
    """Half-edge connectivity derived from a Mesh.

    Half-edge ``3*f + k`` runs from corner k to corner k+1 of face f.
    ``twin`` is -1 along a boundary (only legal for patch sub-meshes).
    """

    def __init__(self, mesh):
        self.mesh = mesh
        F = mesh.faces
        nh = 3 * len(F)
        self.origin = F[:, [0, 1, 2]].reshape(-1)
        self.dest = F[:, [1, 2, 0]].reshape(-1)
        base = np.repeat(np.arange(len(F)) * 3, 3)
        self.next = base + np.tile([1, 2, 0], len(F))
        self.prev = base + np.tile([2, 0, 1], len(F))
        self.face = np.repeat(np.arange(len(F)), 3)

        keys = self.origin.astype(np.int64) * mesh.n_vertices + self.dest
        order = np.argsort(keys, kind="stable")
        if len(keys) != len(np.unique(keys)):
            raise MeshTopologyError("duplicate directed edge; mesh is non-manifold")
        rev = self.dest.astype(np.int64) * mesh.n_vertices + self.origin
        pos = np.searchsorted(keys[order], rev)
        pos_clipped = np.clip(pos, 0, nh - 1)
        cand = order[pos_clipped]
        ok = (pos < nh) & (keys[cand] == rev)
        self.twin = np.where(ok, cand, -1)

        inner = self.twin >= 0
        if not np.array_equal(self.twin[self.twin[inner]], np.arange(nh)[inner]):
            raise MeshTopologyError("twin involution failed")

        # one outgoing half-edge per vertex; on open meshes a boundary vertex
        # must start its fan at the outgoing half-edge without a twin so that
        # the twin(prev(.)) rotation covers the whole fan
        self.vertex_out = np.full(mesh.n_vertices, -1, dtype=np.int64)
        self.vertex_out[self.origin[::-1]] = np.arange(nh - 1, -1, -1)
        for h in np.nonzero(self.twin == -1)[0]:
            self.vertex_out[self.origin[h]] = h

    @property
    def n_halfedges(self):
        return len(self.origin)

    def is_closed(self):
        return bool((self.twin >= 0).all())

    def outgoing(self, v):
        """All outgoing half-edges of v in rotation order (CW around the normal)."""
        h0 = self.vertex_out[v]
        if h0 < 0:
            return []
        out = [h0]
        h = self.twin[self.prev[h0]]
        while h >= 0 and h != h0:
            out.append(h)
            h = self.twin[self.prev[h]]
        if h < 0:
            # hit a boundary rotating one way; also rotate the other way
            h = self.next[self.twin[h0]] if self.twin[h0] >= 0 else -1
            while h >= 0:
                out.insert(0, h)
                h = self.next[self.twin[h]] if self.twin[h] >= 0 else -1
        return out

    def one_ring(self, v):
        """Neighbor vertices of v (rotation order)."""
        out = self.outgoing(v)
        ring = [int(self.dest[h]) for h in out]
        # on an open fan the last incoming neighbor has no outgoing half-edge
        if out:
            o = int(self.origin[self.prev[out[-1]]])
            if o not in ring:
                ring.append(o)
        return ring

    def boundary_halfedges(self):
        return np.nonzero(self.twin == -1)[0]


def vertex_normal_curvature(hem, v, normals=None):
    """Normal curvature at vertex v, averaged over incident edges.

    Per edge (v, w) the estimate is 2 <n_v, p_v - p_w> / |p_v - p_w|^2 with
    n_v the angle-weighted vertex normal; the sign is positive for locally
    convex surfaces with outward normals.
    """
    mesh = hem.mesh
    ring = hem.one_ring(v)
    if not ring:
        raise ValueError(f"vertex {v} has no incident edges")
    n_v = mesh.vertex_normals()[v] if normals is None else normals[v]
    p = mesh.vertices
    d = p[v] - p[ring]
    return float(np.mean(2.0 * (d @ n_v) / np.einsum("ij,ij->i", d, d)))


def normal_curvature_channel(mesh, hem=None):
    """Per-vertex normal curvature for the whole mesh (vectorized)."""
    hem = hem or HalfEdgeMesh(mesh)
    normals = mesh.vertex_normals()
    p = mesh.vertices
    o, d = hem.origin, hem.dest
    diff = p[o] - p[d]
    est = 2.0 * np.einsum("ij,ij->i", diff, normals[o]) / np.einsum("ij,ij->i", diff, diff)
    total = np.zeros(mesh.n_vertices)
    count = np.zeros(mesh.n_vertices)
    np.add.at(total, o, est)
    np.add.at(count, o, 1.0)
    if (count == 0).any():
        raise ValueError("isolated vertices present")
    return total / count


def patch_area(mesh, face_ids):
    """Total area of the given faces (empty set -> 0)."""
    ids = np.fromiter(face_ids, dtype=np.int64) if not isinstance(face_ids, np.ndarray) else face_ids
    if len(ids) == 0:
        return 0.0
    return float(mesh.face_areas()[ids].sum())


# -- IO ---------------------------------------------------------------------


def load_mesh(path, validate=True, color_attr=COLOR_CHANNEL):
    """Load a mesh from PLY or OBJ (with optional JSON attribute sidecar).

    PLY property conventions: red/green/blue (uchar) become the ``color_attr``
    channel as floats in [0, 1]; sx/sy/sz become ``sphere_pos``; patch_id is
    kept as int; every other scalar property becomes a float channel of the
    same name.  When ``validate`` is true the closed genus-zero check runs and
    failure raises MeshTopologyError.
    """
    path = Path(path)
    attrs = {}
    if path.suffix.lower() == ".obj":
        vertices, faces = plyio.read_obj(path)
        sidecar = path.with_suffix(".json")
        if sidecar.exists():
            attrs.update(plyio.read_attribute_sidecar(sidecar, len(vertices)))
    else:
        vertices, faces, props = plyio.read_ply(path)
        if all(c in props for c in ("red", "green", "blue")):
            rgb = np.column_stack([props.pop("red"), props.pop("green"), props.pop("blue")])
            attrs[color_attr] = rgb.astype(np.float64) / 255.0
        if all(c in props for c in ("sx", "sy", "sz")):
            attrs[SPHERE_CHANNEL] = np.column_stack(
                [props.pop("sx"), props.pop("sy"), props.pop("sz")]).astype(np.float64)
        grouped = {}
        for name in list(props):
            if len(name) > 2 and name[-2] == "_" and name[-1].isdigit():
                grouped.setdefault(name[:-2], []).append(name)
        for base, parts in grouped.items():
            parts.sort()
            attrs[base] = np.column_stack([props.pop(p) for p in parts]).astype(np.float64)
        for name, arr in props.items():
            if name == "patch_id":
                attrs[name] = arr.astype(np.int32)
            else:
                attrs[name] = arr.astype(np.float64)

    mesh = Mesh(vertices, faces, attrs)
    if validate:
        mesh.validate_closed_genus_zero()
    return mesh


def save_mesh(mesh, path, binary=True, color_attr=COLOR_CHANNEL, comments=()):
    """Write a mesh and its attribute channels to PLY."""
    props = {}
    for name, arr in mesh.attributes.items():
        arr = np.asarray(arr)
        if name == color_attr:
            q = np.clip(np.round(arr.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
            props["red"], props["green"], props["blue"] = q[:, 0], q[:, 1], q[:, 2]
        elif name == SPHERE_CHANNEL:
            sp = arr.astype(np.float32)
            props["sx"], props["sy"], props["sz"] = sp[:, 0], sp[:, 1], sp[:, 2]
        elif name == "patch_id":
            props[name] = arr.astype(np.int32)
        elif arr.ndim == 2:
            for k in range(arr.shape[1]):
                props[f"{name}_{k}"] = arr[:, k].astype(np.float32)
        else:
            props[name] = arr.astype(np.float32)
    plyio.write_ply(path, mesh.vertices, mesh.faces, props, binary=binary, comments=comments)


def save_attribute_sidecar(mesh, path):
    payload = {}
    for name, arr in mesh.attributes.items():
        payload[name] = np.asarray(arr).tolist()
    with open(path, "w") as fh:
        json.dump(payload, fh)
