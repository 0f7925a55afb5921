"""Patch computation: concentration prefiltering, graph-based segmentation of
the mesh into one background and K foreground patches, boundary extraction
and extension, and per-patch PDF bundles.

Segmentation runs directly on the face-adjacency graph with edge weights
|value_a - value_b| and the region-merging criterion Int(C) + k/|C|, followed
by a minimum-size merge pass.  The background is the largest-area component
whose mean value falls below the Otsu split of the face values.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .material import circular_mean
from .mesh import Mesh, HalfEdgeMesh, patch_area
from .harmonics import SphericalFitter, fit_pdf, SphericalSamples


# -- prefilter ---------------------------------------------------------------


def prefilter(mesh, channel="concentration", sigma_s=None, sigma_r=0.1,
              diffusion_iters=5, white_thresh=0.98):
    """Bilateral one-ring smoothing, then gradient-limited diffusion, then
    white clamping.  Returns the filtered per-vertex array."""
    v = np.asarray(mesh.attribute(channel), dtype=np.float64).copy()
    edges = mesh.edges()
    i, j = edges[:, 0], edges[:, 1]
    d = np.linalg.norm(mesh.vertices[i] - mesh.vertices[j], axis=1)
    if sigma_s is None:
        sigma_s = 2.0 * d.mean()

    dv = v[i] - v[j]
    w = np.exp(-d ** 2 / (2.0 * sigma_s ** 2) - dv ** 2 / (2.0 * sigma_r ** 2))
    num = v.copy()
    den = np.ones_like(v)
    np.add.at(num, i, w * v[j])
    np.add.at(num, j, w * v[i])
    np.add.at(den, i, w)
    np.add.at(den, j, w)
    v = num / den

    deg = np.zeros(len(v))
    np.add.at(deg, i, 1.0)
    np.add.at(deg, j, 1.0)
    deg[deg == 0] = 1.0
    for _ in range(diffusion_iters):
        dv = v[j] - v[i]
        g = np.exp(-(dv / sigma_r) ** 2)
        flux = np.zeros_like(v)
        np.add.at(flux, i, g * dv)
        np.add.at(flux, j, -g * dv)
        v = v + 0.25 * flux / deg

    v[v >= white_thresh] = 1.0
    return v


# -- segmentation ------------------------------------------------------------


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)
        self.size = np.ones(n, dtype=np.int64)
        self.internal = np.zeros(n)

    def find(self, a):
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a, b, w):
        a, b = self.find(a), self.find(b)
        if a == b:
            return a
        if self.size[a] < self.size[b]:
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        self.internal[a] = w
        return a


@dataclass
class Patch:
    id: int
    face_ids: np.ndarray
    vertex_ids: np.ndarray
    area: float
    is_background: bool
    boundary_loops: list = field(default_factory=list)

    def vertex_mask(self, n_vertices):
        m = np.zeros(n_vertices, dtype=bool)
        m[self.vertex_ids] = True
        return m

    def face_mask(self, n_faces):
        m = np.zeros(n_faces, dtype=bool)
        m[self.face_ids] = True
        return m


@dataclass
class PatchSet:
    patches: list
    face_labels: np.ndarray
    vertex_labels: np.ndarray
    degenerate: bool = False

    def __getitem__(self, pid):
        for p in self.patches:
            if p.id == pid:
                return p
        raise KeyError(f"no patch with id {pid}")

    @property
    def background(self):
        return self[0]

    def foreground(self):
        return [p for p in self.patches if not p.is_background]

    def manifest(self):
        return {"patches": [
            {"id": int(p.id), "area": float(p.area), "n_faces": int(len(p.face_ids)),
             "n_vertices": int(len(p.vertex_ids)), "is_background": bool(p.is_background)}
            for p in self.patches]}


def otsu_threshold(values, bins=256):
    """Threshold maximizing between-class variance of a 1-D sample."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi - lo < 1e-12:
        return lo
    hist, edges = np.histogram(v, bins=bins, range=(lo, hi))
    p = hist.astype(np.float64) / hist.sum()
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(p)
    mu = np.cumsum(p * centers)
    mu_t = mu[-1]
    w1 = 1.0 - w0
    valid = (w0 > 0) & (w1 > 0)
    var_between = np.zeros_like(w0)
    var_between[valid] = (mu_t * w0[valid] - mu[valid]) ** 2 / (w0[valid] * w1[valid])
    return float(centers[np.argmax(var_between)])


def segment(mesh, channel="concentration_filtered", k=None, min_size=20, hem=None):
    """Partition faces into background patch 0 and foreground patches 1..K."""
    values = np.asarray(mesh.attribute(channel), dtype=np.float64)
    # median of the corners, not mean: a face straddling a patch border snaps
    # to its majority side instead of minting an intermediate rim level
    face_values = np.median(values[mesh.faces], axis=1)
    hem = hem or HalfEdgeMesh(mesh)

    pair = hem.twin > np.arange(hem.n_halfedges)
    fa = hem.face[pair]
    fb = hem.face[hem.twin[pair]]
    w = np.abs(face_values[fa] - face_values[fb])
    if k is None:
        k = 300.0 * max(w.mean(), 1e-6)

    order = np.lexsort((fb, fa, w))
    uf = _UnionFind(mesh.n_faces)
    for idx in order:
        a, b, weight = int(fa[idx]), int(fb[idx]), float(w[idx])
        ra, rb = uf.find(a), uf.find(b)
        if ra == rb:
            continue
        if weight <= min(uf.internal[ra] + k / uf.size[ra],
                         uf.internal[rb] + k / uf.size[rb]):
            uf.union(ra, rb, weight)
    for idx in order:
        ra, rb = uf.find(int(fa[idx])), uf.find(int(fb[idx]))
        if ra != rb and (uf.size[ra] < min_size or uf.size[rb] < min_size):
            uf.union(ra, rb, float(w[idx]))

    roots = np.array([uf.find(f) for f in range(mesh.n_faces)])
    comp_ids, comp_index = np.unique(roots, return_inverse=True)
    n_comp = len(comp_ids)

    face_areas = mesh.face_areas()
    comp_area = np.zeros(n_comp)
    comp_value = np.zeros(n_comp)
    np.add.at(comp_area, comp_index, face_areas)
    np.add.at(comp_value, comp_index, face_values * face_areas)
    comp_value /= comp_area

    degenerate = n_comp < 2
    if degenerate:
        warnings.warn("segmentation produced a single component; everything is background")
        bg = 0
    else:
        thresh = otsu_threshold(face_values)
        dark = np.nonzero(comp_value < thresh)[0]
        pool = dark if len(dark) else np.arange(n_comp)
        bg = int(pool[np.argmax(comp_area[pool])])

    # deterministic foreground ids by first (lowest) face index
    first_face = np.full(n_comp, mesh.n_faces)
    np.minimum.at(first_face, comp_index, np.arange(mesh.n_faces))
    fg = [c for c in np.argsort(first_face) if c != bg]
    relabel = np.empty(n_comp, dtype=np.int32)
    relabel[bg] = 0
    for rank, c in enumerate(fg):
        relabel[c] = rank + 1
    face_labels = relabel[comp_index]

    # vertex label = majority of incident face labels, ties to the lowest id
    votes = np.zeros((mesh.n_vertices, n_comp), dtype=np.int32)
    for corner in range(3):
        np.add.at(votes, (mesh.faces[:, corner], face_labels), 1)
    vertex_labels = np.argmax(votes, axis=1).astype(np.int32)

    patches = []
    for pid in range(n_comp):
        faces = np.nonzero(face_labels == pid)[0]
        verts = np.unique(mesh.faces[faces])
        patches.append(Patch(id=pid, face_ids=faces, vertex_ids=verts,
                             area=patch_area(mesh, faces), is_background=(pid == 0)))
    pset = PatchSet(patches, face_labels.astype(np.int32), vertex_labels, degenerate)
    mesh.set_attribute("patch_id", vertex_labels)
    return pset


# -- boundaries --------------------------------------------------------------


def _boundary_halfedges(patch_faces_mask, hem):
    in_patch = patch_faces_mask[hem.face]
    twin_out = np.where(hem.twin >= 0, ~patch_faces_mask[hem.face[hem.twin]], True)
    return np.nonzero(in_patch & twin_out)[0]


def extract_boundary(patch, hem):
    """Ordered closed vertex loops along edges where patch faces meet
    non-patch faces; orientation follows the mesh orientation."""
    fmask = patch.face_mask(hem.mesh.n_faces)
    bnd = _boundary_halfedges(fmask, hem)
    bnd_set = set(int(h) for h in bnd)
    loops = []
    visited = set()
    for h0 in bnd:
        h0 = int(h0)
        if h0 in visited:
            continue
        loop = []
        h = h0
        while True:
            visited.add(h)
            loop.append(int(hem.origin[h]))
            g = hem.next[h]
            while g not in bnd_set:
                g = hem.next[hem.twin[g]]
            h = int(g)
            if h == h0:
                break
        loops.append(loop)
    patch.boundary_loops = loops
    return loops


def extend_boundary(patch, hem):
    """Grow the patch vertex set by the outside one-ring of its boundary;
    the face set is unchanged."""
    if not patch.boundary_loops:
        extract_boundary(patch, hem)
    inside = set(int(v) for v in patch.vertex_ids)
    added = set()
    for loop in patch.boundary_loops:
        for v in loop:
            for u in hem.one_ring(v):
                if u not in inside:
                    added.add(u)
    new_ids = np.array(sorted(inside | added), dtype=np.int64)
    return Patch(id=patch.id, face_ids=patch.face_ids, vertex_ids=new_ids,
                 area=patch.area, is_background=patch.is_background,
                 boundary_loops=patch.boundary_loops)


# -- per-patch PDFs ----------------------------------------------------------

SOURCE_CHANNELS = ("curvature", "composition", "concentration", "hue", "saturation")
TARGET_CHANNELS = ("curvature", "composition", "concentration")


@dataclass
class PatchPDFs:
    """PDF bundle for one patch, plus the mask-indicator PDF used to undo the
    rolloff a masked fit introduces near the patch rim."""
    patch_id: int
    pdfs: dict
    indicator: object
    hue_offset: float = 0.0
    mask: np.ndarray = None


def patch_submesh(mesh, patch):
    """Sub-mesh of the patch's faces with locally reindexed vertices.
    Returns (sub Mesh, parent vertex ids)."""
    faces = mesh.faces[patch.face_ids]
    verts = np.unique(faces)
    local = np.full(mesh.n_vertices, -1, dtype=np.int64)
    local[verts] = np.arange(len(verts))
    return Mesh(mesh.vertices[verts], local[faces]), verts


def build_patch_pdfs(patch, sm, channels, order, fitter=None, hue_shift=True,
                     regularization=1e-8, outside_zero=True):
    """Fit one PDF per channel over the patch's (extended) vertex set.

    Values outside the mask enter as zeros at full weight by default.  Hue is
    shifted so its in-mask circular mean sits at 0.5 before fitting; the
    offset is recorded for un-shifting reconstructions.
    """
    mesh = sm.base
    mask = patch.vertex_mask(mesh.n_vertices)
    dirs = sm.sphere_positions
    if fitter is None and outside_zero:
        sphere = Mesh(dirs, mesh.faces)
        fitter = SphericalFitter(dirs, order, weights=sphere.vertex_areas(),
                                 regularization=regularization)

    hue_offset = 0.0
    pdfs = {}
    for rho in channels:
        values = np.asarray(mesh.attribute(rho), dtype=np.float64).copy()
        if rho == "hue" and hue_shift:
            mean = circular_mean(values[mask],
                                 None if fitter is None else fitter.weights[mask])
            hue_offset = (0.5 - mean) % 1.0
            values = (values + hue_offset) % 1.0
        if outside_zero:
            pdfs[rho] = fitter.fit(values, mask=mask, property_tag=rho)
        else:
            samples = SphericalSamples(dirs, values, mask)
            pdfs[rho] = fit_pdf(samples, order, regularization=regularization,
                                property_tag=rho, outside_zero=False)

    if outside_zero:
        indicator = fitter.fit(mask.astype(np.float64), property_tag="mask")
    else:
        samples = SphericalSamples(dirs, mask.astype(np.float64), mask)
        indicator = fit_pdf(samples, order, regularization=regularization,
                            property_tag="mask", outside_zero=False)
    return PatchPDFs(patch_id=patch.id, pdfs=pdfs, indicator=indicator,
                     hue_offset=hue_offset, mask=mask)
