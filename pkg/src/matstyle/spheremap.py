"""Conformal mapping of genus-zero meshes to the unit sphere.

The solver performs tangential cotangent-Laplacian gradient descent on the
string energy with reprojection to the sphere, followed by an inversive
centering step that drives the area-weighted center of mass to the origin.
Also provides landmark alignment between two mapped spheres, disk mapping of
patch sub-meshes for shape energies, and the inverse map back to object space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, HalfEdgeMesh


def cotangent_edge_weights(vertices, faces, clamp=True):
    """Per unique undirected edge: k_ij = (cot a + cot b)/2 over incident faces.

    Returns (edges (E,2) int array sorted lexicographically, weights (E,)).
    Boundary edges keep their single-sided cotangent.
    """
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    tris = v[f]
    cots = np.empty((len(f), 3))
    for k in range(3):
        a = tris[:, (k + 1) % 3] - tris[:, k]
        b = tris[:, (k + 2) % 3] - tris[:, k]
        cross = np.linalg.norm(np.cross(a, b), axis=1)
        if (cross <= 1e-300).any():
            raise ValueError("degenerate (zero-area) triangle encountered")
        cots[:, k] = np.einsum("ij,ij->i", a, b) / cross
    # angle at corner k faces edge (k+1, k+2)
    e = np.vstack([f[:, [1, 2]], f[:, [2, 0]], f[:, [0, 1]]])
    w = 0.5 * cots.T.reshape(-1)
    e.sort(axis=1)
    edges, inv = np.unique(e, axis=0, return_inverse=True)
    weights = np.zeros(len(edges))
    np.add.at(weights, inv, w)
    if clamp:
        weights = np.maximum(weights, 0.0)
    return edges, weights


def harmonic_energy(src_positions, mapped_positions, hem):
    """String energy sum k_ij |f_i - f_j|^2 with cotangent constants from the
    source geometry."""
    edges, weights = cotangent_edge_weights(src_positions, hem.mesh.faces)
    return string_energy(edges, weights, mapped_positions)


def string_energy(edges, weights, mapped_positions):
    f = np.asarray(mapped_positions, dtype=np.float64)
    d = f[edges[:, 0]] - f[edges[:, 1]]
    if d.ndim == 1:
        return float(weights @ (d * d))
    return float(weights @ np.einsum("ij,ij->i", d, d))


@dataclass
class SphericalMesh:
    """A mesh together with its unit-sphere parameterization."""
    base: Mesh
    sphere_positions: np.ndarray
    energy_trace: list = field(default_factory=list)
    converged: bool = True

    def __post_init__(self):
        self.sphere_positions = np.asarray(self.sphere_positions, dtype=np.float64)
        if len(self.sphere_positions) != self.base.n_vertices:
            raise ValueError("sphere position count != vertex count")
        norms = np.linalg.norm(self.sphere_positions, axis=1)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ValueError("sphere positions must be unit vectors")

    def directions(self):
        return self.sphere_positions


@dataclass
class LandmarkSet:
    """Correspondences for rotational alignment: vertex-id pairs or unit
    direction pairs in sphere space."""
    vertex_pairs: list = None       # [(src_vid, tar_vid), ...]
    direction_pairs: list = None    # [(src_dir, tar_dir), ...]

    def resolve(self, src_sm, tar_sm):
        src, tar = [], []
        if self.direction_pairs:
            for s, t in self.direction_pairs:
                src.append(np.asarray(s, dtype=np.float64))
                tar.append(np.asarray(t, dtype=np.float64))
        if self.vertex_pairs:
            for sv, tv in self.vertex_pairs:
                src.append(src_sm.sphere_positions[sv])
                tar.append(tar_sm.sphere_positions[tv])
        if len(src) < 3:
            raise ValueError("need at least 3 landmark pairs")
        src = np.asarray(src)
        tar = np.asarray(tar)
        return src / np.linalg.norm(src, axis=1, keepdims=True), \
            tar / np.linalg.norm(tar, axis=1, keepdims=True)


def _normalize_rows(p):
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def _spherical_face_areas(positions, faces):
    p = np.asarray(positions)
    e1 = p[faces[:, 1]] - p[faces[:, 0]]
    e2 = p[faces[:, 2]] - p[faces[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def area_weighted_centroid(positions, faces):
    fa = _spherical_face_areas(positions, faces)
    fc = positions[faces].mean(axis=1)
    return (fa[:, None] * fc).sum(axis=0) / fa.sum()


def mobius_center(positions, faces, tol=1e-6, max_iters=100, damping=0.5):
    """Drive the area-weighted center of mass to the origin with inversive
    sphere automorphisms (each step is a Mobius transformation of S^2)."""
    f = _normalize_rows(np.asarray(positions, dtype=np.float64).copy())
    for _ in range(max_iters):
        c = area_weighted_centroid(f, faces)
        if np.linalg.norm(c) < tol:
            break
        c = damping * c
        d = f - c
        f = (1.0 - c @ c) * d / np.einsum("ij,ij->i", d, d)[:, None] - c
        f = _normalize_rows(f)
    return f


def conformal_map_to_sphere(mesh, max_iters=5000, energy_tol=1e-6, step_size=0.5):
    """Map a closed genus-zero mesh onto the unit sphere.

    Centered radial initialization, then projected gradient descent on the
    string energy (tangential Laplacian steps with backtracking and sphere
    reprojection), then inversive centering.  A mesh already on the unit
    sphere is a fixed point.  Returns a SphericalMesh whose energy trace is
    non-increasing; converged=False flags a max_iters stop.
    """
    edges, weights = cotangent_edge_weights(mesh.vertices, mesh.faces)
    V = mesh.n_vertices
    i, j = edges[:, 0], edges[:, 1]
    W = sp.coo_matrix((np.r_[weights, weights], (np.r_[i, j], np.r_[j, i])),
                      shape=(V, V)).tocsr()
    deg = np.asarray(W.sum(axis=1)).reshape(-1)
    deg[deg == 0] = 1.0

    center = area_weighted_centroid(mesh.vertices, mesh.faces)
    f = _normalize_rows(mesh.vertices - center)

    energy = string_energy(edges, weights, f)
    trace = [energy]
    step = step_size
    converged = False
    for _ in range(max_iters):
        lap = deg[:, None] * f - W @ f
        lap -= np.einsum("ij,ij->i", lap, f)[:, None] * f   # tangential part
        # a step is taken only if it clears the relative-improvement floor,
        # so a mesh already at the energy minimum is left untouched
        accepted = False
        for _ in range(30):
            cand = _normalize_rows(f - step * (lap / deg[:, None]))
            e_new = string_energy(edges, weights, cand)
            if energy - e_new >= energy_tol * energy:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        f, energy = cand, e_new
        trace.append(energy)
        step = min(step * 1.2, step_size)

    f = mobius_center(f, mesh.faces, tol=1e-6)
    return SphericalMesh(mesh, f, energy_trace=trace, converged=converged)


def align_spheres(src_sm, tar_sm, landmarks, apply=True):
    """Least-squares rotation carrying target landmark directions onto the
    source's (orthogonal Procrustes, det +1); optionally applied to all
    target sphere positions."""
    src_dirs, tar_dirs = landmarks.resolve(src_sm, tar_sm)
    H = tar_dirs.T @ src_dirs
    U, S, Vt = np.linalg.svd(H)
    if S[1] < 1e-12:
        raise ValueError("landmark directions are collinear or degenerate")
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    if apply:
        tar_sm.sphere_positions = _normalize_rows(tar_sm.sphere_positions @ R.T)
    return R


def _boundary_loops(hem):
    """All boundary loops of an open mesh, each an ordered vertex list,
    longest first (ties: lowest starting vertex id).

    Successorship rotates around the shared vertex's half-edge fan, so a
    pinch vertex sitting on two loops stays unambiguous.
    """
    bnd = [int(h) for h in hem.boundary_halfedges()]
    if len(bnd) == 0:
        raise ValueError("mesh is closed; expected a mesh with boundary")
    succ = {}
    for h in bnd:
        g = int(hem.next[h])
        while hem.twin[g] != -1:
            g = int(hem.next[hem.twin[g]])
        succ[h] = g
    loops = []
    visited = set()
    for start in sorted(bnd):
        if start in visited:
            continue
        walk = [start]
        visited.add(start)
        g = succ[start]
        while g != start:
            if g in visited or len(walk) > len(bnd):
                raise ValueError("boundary walk does not close into loops")
            walk.append(g)
            visited.add(g)
            g = succ[g]
        loops.append([int(hem.origin[h]) for h in walk])
    loops.sort(key=lambda l: (-len(l), l[0]))
    return loops


def map_to_disk(mesh):
    """Harmonic map of a mesh with boundary to the unit disk.

    The longest boundary loop goes to the circle by arc length; the interior
    solves the cotangent Laplace equation.  Any other boundary loops (holes)
    are left free, so non-disk patches flatten with natural boundaries and
    their distortion shows up in the string energy.  Returns (V, 2)
    coordinates.
    """
    hem = HalfEdgeMesh(mesh)
    loop = _boundary_loops(hem)[0]
    p = mesh.vertices
    seg = np.linalg.norm(p[np.r_[loop[1:], loop[:1]]] - p[loop], axis=1)
    s = np.r_[0.0, np.cumsum(seg[:-1])]
    ang = 2.0 * np.pi * s / seg.sum()
    uv = np.zeros((mesh.n_vertices, 2))
    uv[loop, 0] = np.cos(ang)
    uv[loop, 1] = np.sin(ang)

    edges, weights = cotangent_edge_weights(mesh.vertices, mesh.faces)
    V = mesh.n_vertices
    i, j = edges[:, 0], edges[:, 1]
    W = sp.coo_matrix((np.r_[weights, weights], (np.r_[i, j], np.r_[j, i])),
                      shape=(V, V)).tocsr()
    deg = np.asarray(W.sum(axis=1)).reshape(-1)
    L = sp.diags(deg) - W

    interior = np.ones(V, dtype=bool)
    interior[loop] = False
    if interior.any():
        lu = spla.splu(L[interior][:, interior].tocsc())
        rhs = -L[interior][:, ~interior] @ uv[~interior]
        uv[interior] = np.column_stack([lu.solve(rhs[:, 0]), lu.solve(rhs[:, 1])])
    return uv


def disk_shape_energy(mesh):
    """Average string energy of the patch's harmonic map to the unit disk.

    The per-edge average makes energies of congruent patches at different
    tessellation positions comparable.
    """
    uv = map_to_disk(mesh)
    edges, weights = cotangent_edge_weights(mesh.vertices, mesh.faces)
    return string_energy(edges, weights, uv) / len(edges)


def inverse_map(sm):
    """Back to object space: original geometry with all channels accumulated
    during sphere-space processing."""
    return Mesh(sm.base.vertices.copy(), sm.base.faces.copy(),
                {k: np.asarray(v).copy() for k, v in sm.base.attributes.items()},
                dict(sm.base.metadata))
