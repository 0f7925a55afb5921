"""Property distribution maps and the style-transfer core.

Per band i, a PDM stores T^i = (l_tar/l_src) * R^i where R^i is the proper
rotation carrying the normalized source coefficient vector onto the target's
(two composed Householder reflections).  Material maps are PDMs between a
material PDF and an appearance PDF on the same patch; the saturation and hue
reconstruction chains conjugate the target material PDM by the source
material map, scale, and apply the result to the source appearance PDF.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .harmonics import PDF, sh_basis_matrix
from .material import hsv_to_rgb
from .mesh import Mesh
from .spheremap import align_spheres, disk_shape_energy

ZERO_NORM = 1e-12


class StageError(RuntimeError):
    """Failure annotated with the pipeline stage that raised it."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


def householder(v):
    """Reflection I - 2vv^T across the hyperplane orthogonal to unit v."""
    v = np.asarray(v, dtype=np.float64)
    return np.eye(len(v)) - 2.0 * np.outer(v, v)


def rotation_between(u, v):
    """Proper rotation R with R u = v for unit vectors, as the composition of
    reflections across the bisector and across v.

    Identical vectors give exactly the identity.  In one dimension a sign
    flip has no proper rotation; the single reflection [-1] is returned.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    dim = len(u)
    if np.array_equal(u, v) or np.linalg.norm(u - v) < 1e-15:
        return np.eye(dim)
    if dim == 1:
        return np.array([[-1.0]])
    w = u + v
    wn = np.linalg.norm(w)
    if wn < 1e-9:
        # antipodal: rotate by pi in a plane containing v
        basis = np.zeros(dim)
        basis[np.argmin(np.abs(v))] = 1.0
        w = basis - (basis @ v) * v
        w /= np.linalg.norm(w)
        return householder(v) @ householder(w)
    return householder(v) @ householder(w / wn)


@dataclass
class PDM:
    """Per-band scale-and-rotation maps between two PDFs of one property."""
    property_tag: str
    order: int
    scales: np.ndarray                 # l_tar / l_src per band (0 if target band empty)
    rotations: list                    # (2i+1) x (2i+1) orthogonal per band
    excluded: set = field(default_factory=set)
    src_norms: np.ndarray = None
    tar_norms: np.ndarray = None

    def matrix(self, i):
        return self.scales[i] * self.rotations[i]

    def matrices(self):
        return [self.matrix(i) for i in range(self.order + 1)]

    def band_det(self, i):
        dim = len(self.rotations[i])
        return self.scales[i] ** dim * np.linalg.det(self.rotations[i])

    def inverse_matrix(self, i):
        if self.scales[i] < ZERO_NORM:
            raise ValueError(f"band {i} is singular (zero scale)")
        return (1.0 / self.scales[i]) * self.rotations[i].T

    def is_singular(self, i):
        return self.scales[i] < ZERO_NORM

    def to_json_dict(self):
        return {
            "property": self.property_tag,
            "order": self.order,
            "bands": [self.matrix(i).tolist() for i in range(self.order + 1)],
            "excluded": sorted(int(i) for i in self.excluded),
        }


class MaterialMap(PDM):
    """A PDM between a material PDF and an appearance PDF on the same patch."""


def compute_pdm(src_pdf, tar_pdf, check_tags=True, cls=PDM, tag=None):
    """Per-band scaling+rotation mapping the source PDF onto the target PDF.

    Empty bands: both empty gives the identity; an empty source band with a
    nonzero target has no scaling, is set to the identity and excluded from
    cost sums and reconstruction chains; an empty target band gives the
    well-defined zero map.
    """
    if src_pdf.order != tar_pdf.order:
        raise ValueError("PDF orders differ")
    if check_tags and src_pdf.property_tag != tar_pdf.property_tag:
        raise ValueError(
            f"property tags differ: {src_pdf.property_tag} vs {tar_pdf.property_tag}")
    n = src_pdf.order
    scales = np.ones(n + 1)
    rotations = []
    excluded = set()
    src_norms = src_pdf.band_norms()
    tar_norms = tar_pdf.band_norms()
    for i in range(n + 1):
        l_src, l_tar = src_norms[i], tar_norms[i]
        dim = 2 * i + 1
        if l_src < ZERO_NORM and l_tar < ZERO_NORM:
            scales[i] = 1.0
            rotations.append(np.eye(dim))
        elif l_src < ZERO_NORM:
            scales[i] = 1.0
            rotations.append(np.eye(dim))
            excluded.add(i)
        elif l_tar < ZERO_NORM:
            scales[i] = 0.0
            rotations.append(np.eye(dim))
        else:
            scales[i] = l_tar / l_src
            rotations.append(rotation_between(src_pdf.band(i) / l_src,
                                              tar_pdf.band(i) / l_tar))
    return cls(property_tag=tag or tar_pdf.property_tag, order=n, scales=scales,
               rotations=rotations, excluded=excluded,
               src_norms=src_norms, tar_norms=tar_norms)


def compute_material_map(p_material, p_appearance):
    """Material map on one patch: identical machinery to compute_pdm applied
    to the (material PDF -> appearance PDF) pair."""
    return compute_pdm(p_material, p_appearance, check_tags=False, cls=MaterialMap,
                       tag=f"{p_material.property_tag}->{p_appearance.property_tag}")


def pdm_cost(pdm):
    """Scale-change cost: sum over non-excluded bands of |1 - det T^i|."""
    return float(sum(abs(1.0 - pdm.band_det(i))
                     for i in range(pdm.order + 1) if i not in pdm.excluded))


def apply_pdm(pdm, src_pdf):
    """Per-band matrix-vector application; excluded bands pass through."""
    if pdm.order != src_pdf.order:
        raise ValueError("orders differ")
    out = np.empty_like(src_pdf.coeffs)
    for i in range(pdm.order + 1):
        band = src_pdf.band(i)
        if i in pdm.excluded:
            out[i * i:(i + 1) * (i + 1)] = band
        else:
            out[i * i:(i + 1) * (i + 1)] = pdm.scales[i] * (pdm.rotations[i] @ band)
    return PDF(pdm.property_tag, pdm.order, out)


def invert_pdm(pdm):
    scales = np.empty_like(pdm.scales)
    rotations = []
    for i in range(pdm.order + 1):
        if pdm.is_singular(i):
            raise ValueError(f"band {i} is singular; PDM not invertible")
        scales[i] = 1.0 / pdm.scales[i]
        rotations.append(pdm.rotations[i].T.copy())
    return PDM(pdm.property_tag, pdm.order, scales, rotations, set(pdm.excluded))


# -- matching ---------------------------------------------------------------


@dataclass(frozen=True)
class MatchWeights:
    """Relative weights for the shape, area, curvature, composition and
    concentration costs; normalized to sum 1 on construction."""
    shape: float = 0.2
    area: float = 0.2
    curvature: float = 0.2
    composition: float = 0.2
    concentration: float = 0.2

    def __post_init__(self):
        vals = self.as_array()
        if (vals < 0).any():
            raise ValueError("weights must be non-negative")
        total = vals.sum()
        if total <= 0:
            raise ValueError("weights must not all be zero")
        for name, v in zip(self.names(), vals / total):
            object.__setattr__(self, name, float(v))

    @staticmethod
    def names():
        return ("shape", "area", "curvature", "composition", "concentration")

    def as_array(self):
        return np.array([getattr(self, n) for n in self.names()], dtype=np.float64)


@dataclass(frozen=True)
class AssignParams:
    """Reconstruction knobs: concentration scale mu_s, frequency emphasis f_s,
    pigment scale mu_h, and the Gaussian blend radius (sphere arc length)."""
    mu_s: float = 1.0
    f_s: float = 0.0
    mu_h: float = 1.0
    blend_sigma: float = None
    raw_sigma: bool = False

    def __post_init__(self):
        if self.mu_s <= 0 or self.mu_h <= 0:
            raise ValueError("mu_s and mu_h must be positive")
        if self.blend_sigma is not None and self.blend_sigma <= 0:
            raise ValueError("blend_sigma must be positive")


def shape_cost(src_energy, tar_energy):
    return abs(float(src_energy) - float(tar_energy))


def area_cost(src_area, tar_area):
    return abs(float(src_area) - float(tar_area))


@dataclass
class PatchFeatures:
    """Everything matching needs to know about one patch."""
    patch_id: int
    area: float
    shape_energy: float
    pdfs: dict
    is_background: bool = False
    hue_offset: float = 0.0
    indicator: PDF = None


@dataclass
class Match:
    tar_id: int
    src_id: int
    costs: dict
    total: float


@dataclass
class MatchResult:
    matches: list
    weights: MatchWeights
    cost_matrices: dict = None
    tar_ids: list = None
    src_ids: list = None

    def assignment(self):
        return {m.tar_id: m.src_id for m in self.matches}

    def to_json_dict(self):
        return {
            "matches": [{"tar_id": m.tar_id, "src_id": m.src_id,
                         "costs": m.costs, "total": m.total} for m in self.matches],
            "weights": {n: getattr(self.weights, n) for n in MatchWeights.names()},
        }


_COST_CHANNELS = (("curvature", "curvature"), ("composition", "composition"),
                  ("concentration", "concentration"))


def match_patches(src_feats, tar_feats, weights=None, normalize=True):
    """Assign each foreground target patch the source patch minimizing the
    weighted five-cost sum; the background pair is matched directly.

    Raw cost columns are min-max normalized over the candidate matrix before
    weighting (switchable); ties break toward the lowest source patch id.
    """
    weights = weights or MatchWeights()
    src_fg = sorted((f for f in src_feats if not f.is_background), key=lambda f: f.patch_id)
    tar_fg = sorted((f for f in tar_feats if not f.is_background), key=lambda f: f.patch_id)
    if not src_fg or not tar_fg:
        raise ValueError("both meshes need at least one foreground patch")

    nt, ns = len(tar_fg), len(src_fg)
    cost = {name: np.zeros((nt, ns)) for name in MatchWeights.names()}
    for ti, tf in enumerate(tar_fg):
        for si, sf in enumerate(src_fg):
            cost["shape"][ti, si] = shape_cost(sf.shape_energy, tf.shape_energy)
            cost["area"][ti, si] = area_cost(sf.area, tf.area)
            for name, channel in _COST_CHANNELS:
                q = compute_pdm(sf.pdfs[channel], tf.pdfs[channel])
                cost[name][ti, si] = pdm_cost(q)

    norm = {}
    for name, mat in cost.items():
        if normalize:
            lo, hi = mat.min(), mat.max()
            norm[name] = (mat - lo) / (hi - lo) if hi - lo > 1e-15 else np.zeros_like(mat)
        else:
            norm[name] = mat
    total = sum(getattr(weights, name) * norm[name] for name in MatchWeights.names())

    matches = []
    for ti, tf in enumerate(tar_fg):
        si = int(np.argmin(total[ti]))   # first minimum = lowest source id
        matches.append(Match(
            tar_id=tf.patch_id, src_id=src_fg[si].patch_id,
            costs={name: float(cost[name][ti, si]) for name in MatchWeights.names()},
            total=float(total[ti, si])))
    src_bg = [f for f in src_feats if f.is_background]
    tar_bg = [f for f in tar_feats if f.is_background]
    if src_bg and tar_bg:
        matches.append(Match(tar_id=tar_bg[0].patch_id, src_id=src_bg[0].patch_id,
                             costs={n: 0.0 for n in MatchWeights.names()}, total=0.0))
    return MatchResult(matches=matches, weights=weights, cost_matrices=cost,
                       tar_ids=[f.patch_id for f in tar_fg],
                       src_ids=[f.patch_id for f in src_fg])


# -- reconstruction transforms ------------------------------------------------


def frequency_scale(order, f_s, band, raw=False):
    """Per-band frequency weight (n+1) + f_s*i, divided by (n+1) unless raw so
    that f_s = 0 is neutral."""
    sigma = (order + 1.0) + f_s * band
    return sigma if raw else sigma / (order + 1.0)


def _conjugate_chain(mm, q, scalars):
    """Per band: scalars[i] * M T M^{-1} with M the material-map band.

    Bands where the material map is excluded or singular, or the property PDM
    is excluded, fall back to the identity and are marked excluded.
    """
    n = mm.order
    scales = np.ones(n + 1)
    rotations = []
    excluded = set()
    for i in range(n + 1):
        if i in mm.excluded or mm.is_singular(i) or i in q.excluded:
            scales[i] = 1.0
            rotations.append(np.eye(2 * i + 1))
            excluded.add(i)
            continue
        scales[i] = scalars[i] * q.scales[i]
        rotations.append(mm.rotations[i] @ q.rotations[i] @ mm.rotations[i].T)
    return scales, rotations, excluded


def saturation_transform(mm_cs, q_c, params, order=None):
    """Saturation chain: per band T_s = T_cs * (mu_s sigma_s) * T_c * T_cs^{-1}."""
    n = order if order is not None else mm_cs.order
    if mm_cs.order != q_c.order:
        raise ValueError("material map and concentration PDM orders differ")
    scalars = np.array([params.mu_s * frequency_scale(n, params.f_s, i, params.raw_sigma)
                        for i in range(mm_cs.order + 1)])
    scales, rotations, excluded = _conjugate_chain(mm_cs, q_c, scalars)
    return PDM("saturation", mm_cs.order, scales, rotations, excluded)


def hue_transform(mm_mh, q_m, mu_h=1.0):
    """Hue analogue of the saturation chain: T_h = T_mh * mu_h * T_m * T_mh^{-1}."""
    if mm_mh.order != q_m.order:
        raise ValueError("material map and composition PDM orders differ")
    scalars = np.full(mm_mh.order + 1, float(mu_h))
    scales, rotations, excluded = _conjugate_chain(mm_mh, q_m, scalars)
    return PDM("hue", mm_mh.order, scales, rotations, excluded)


# -- blending and composition --------------------------------------------------


def _sphere_edge_graph(sm):
    edges = sm.base.edges()
    p = sm.sphere_positions
    dots = np.einsum("ij,ij->i", p[edges[:, 0]], p[edges[:, 1]])
    arc = np.arccos(np.clip(dots, -1.0, 1.0))
    V = sm.base.n_vertices
    return sp.coo_matrix((np.r_[arc, arc],
                          (np.r_[edges[:, 0], edges[:, 1]],
                           np.r_[edges[:, 1], edges[:, 0]])), shape=(V, V)).tocsr()


def boundary_distances(sm, patch_set, limit):
    """Arc-length distance from every vertex to the nearest foreground patch
    boundary, and that boundary's patch id (-1 where beyond the limit)."""
    V = sm.base.n_vertices
    source_patch = np.full(V, -1, dtype=np.int64)
    for p in sorted(patch_set.foreground(), key=lambda p: p.id):
        for loop in p.boundary_loops:
            for v in loop:
                if source_patch[v] < 0:
                    source_patch[v] = p.id
    sources = np.nonzero(source_patch >= 0)[0]
    dist = np.full(V, np.inf)
    owner = np.full(V, -1, dtype=np.int64)
    if len(sources) == 0:
        return dist, owner
    graph = _sphere_edge_graph(sm)
    d, _, src_vertex = dijkstra(graph, directed=False, indices=sources,
                                return_predecessors=True, min_only=True, limit=limit)
    reached = np.isfinite(d)
    dist[reached] = d[reached]
    owner[reached] = source_patch[src_vertex[reached]]
    return dist, owner


@dataclass
class PatchReconstruction:
    """Reconstructed appearance PDFs for one target patch (hue in the source
    patch's shifted frame)."""
    patch_id: int
    hue_pdf: PDF
    sat_pdf: PDF
    hue_offset: float
    indicator: PDF


def _eval_patch_fields(recon, dirs, indicator_division=True, floor=0.05):
    B = sh_basis_matrix(dirs, recon.hue_pdf.order)
    hue = B @ recon.hue_pdf.coeffs
    sat = B @ recon.sat_pdf.coeffs
    if indicator_division:
        ind = B @ recon.indicator.coeffs
        ind = np.where(np.abs(ind) < floor, np.sign(ind) * floor + (ind == 0) * floor, ind)
        hue = hue / ind
        sat = sat / ind
    hue = (hue - recon.hue_offset) % 1.0
    sat = np.clip(sat, 0.0, 1.0)
    return hue, sat


def blend_and_compose(tar_mesh, sm, patch_set, recon, sigma=None,
                      indicator_division=True, value_channel="value",
                      color_attr="rgb"):
    """Evaluate each vertex's patch reconstruction, blend across patch
    boundaries with a Gaussian of the signed boundary distance (w = 0.5 on the
    boundary), and compose final colors with the target's value channel."""
    if value_channel not in tar_mesh.attributes:
        raise KeyError(f"target mesh lacks '{value_channel}' channel")
    dirs = sm.sphere_positions
    labels = patch_set.vertex_labels
    V = tar_mesh.n_vertices
    if sigma is None:
        edges = tar_mesh.edges()
        p = dirs
        sigma = 2.0 * float(np.arccos(np.clip(np.einsum(
            "ij,ij->i", p[edges[:, 0]], p[edges[:, 1]]), -1, 1)).mean())

    by_id = {r.patch_id: r for r in recon}
    hue = np.zeros(V)
    sat = np.zeros(V)
    for pid, r in by_id.items():
        idx = np.nonzero(labels == pid)[0]
        if len(idx):
            hue[idx], sat[idx] = _eval_patch_fields(r, dirs[idx], indicator_division)

    dist, owner = boundary_distances(sm, patch_set, limit=3.0 * sigma)
    blendable = (owner >= 0) & np.isfinite(dist)
    for q in np.unique(owner[blendable]):
        if q < 0 or q not in by_id:
            continue
        idx = np.nonzero(blendable & (owner == q))[0]
        inside = labels[idx] == q
        partner = np.where(inside, 0, labels[idx])
        d = dist[idx]
        w_q = 0.5 * (1.0 + np.where(inside, 1.0, -1.0) * (1.0 - np.exp(-d * d / (2.0 * sigma * sigma))))
        hue_q, sat_q = _eval_patch_fields(by_id[q], dirs[idx], indicator_division)
        for pid in np.unique(partner):
            if pid == q or pid not in by_id:
                continue
            sel = partner == pid
            hue_p, sat_p = _eval_patch_fields(by_id[pid], dirs[idx[sel]], indicator_division)
            w = w_q[sel]
            diff = (hue_q[sel] - hue_p + 0.5) % 1.0 - 0.5   # shorter circular arc
            hue[idx[sel]] = (hue_p + w * diff) % 1.0
            sat[idx[sel]] = (1.0 - w) * sat_p + w * sat_q[sel]

    out = tar_mesh.copy()
    out.set_attribute("hue", hue)
    out.set_attribute("saturation", sat)
    value = np.asarray(tar_mesh.attribute(value_channel), dtype=np.float64)
    rgb = hsv_to_rgb(np.column_stack([hue, np.clip(sat, 0, 1), np.clip(value, 0, 1)]))
    out.set_attribute(color_attr, rgb)
    return out


# -- end-to-end ---------------------------------------------------------------


def _run_stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _spherical(mesh, map_opts):
    from .spheremap import SphericalMesh, conformal_map_to_sphere
    if "sphere_pos" in mesh.attributes:
        return SphericalMesh(mesh, np.asarray(mesh.attributes["sphere_pos"]))
    return conformal_map_to_sphere(mesh, **(map_opts or {}))


def _measure(mesh):
    from .material import extract_measurements
    from .mesh import normal_curvature_channel
    extract_measurements(mesh)
    mesh.set_attribute("curvature", normal_curvature_channel(mesh))
    return mesh


def _segment_mesh(mesh, filter_opts, seg_opts):
    from .patch import prefilter, segment, extract_boundary, extend_boundary
    from .mesh import HalfEdgeMesh
    mesh.set_attribute("concentration_filtered",
                       prefilter(mesh, "concentration", **(filter_opts or {})))
    hem = HalfEdgeMesh(mesh)
    pset = segment(mesh, "concentration_filtered", hem=hem, **(seg_opts or {}))
    for idx, p in enumerate(pset.patches):
        extract_boundary(p, hem)
        pset.patches[idx] = extend_boundary(p, hem)
    return pset


def _fit_bundles(sm, pset, channels, order, hue_shift, outside_zero, regularization):
    from .patch import build_patch_pdfs
    from .harmonics import SphericalFitter
    sphere = Mesh(sm.sphere_positions, sm.base.faces)
    fitter = SphericalFitter(sm.sphere_positions, order, weights=sphere.vertex_areas(),
                             regularization=regularization)
    bundles = {}
    for p in sorted(pset.patches, key=lambda p: p.id):
        bundles[p.id] = build_patch_pdfs(p, sm, channels, order, fitter=fitter,
                                         hue_shift=hue_shift, outside_zero=outside_zero)
    return bundles, fitter


def _shape_energies(mesh, pset):
    from .patch import patch_submesh
    energies = {}
    for p in pset.patches:
        if p.is_background:
            energies[p.id] = 0.0
            continue
        sub, _ = patch_submesh(mesh, p)
        energies[p.id] = disk_shape_energy(sub)
    return energies


def _features(pset, bundles, energies):
    feats = []
    for p in sorted(pset.patches, key=lambda p: p.id):
        b = bundles[p.id]
        feats.append(PatchFeatures(patch_id=p.id, area=p.area,
                                   shape_energy=energies[p.id], pdfs=b.pdfs,
                                   is_background=p.is_background,
                                   hue_offset=b.hue_offset, indicator=b.indicator))
    return feats


def style_transfer(src_mesh, tar_mesh, weights=None, params=None, order=16,
                   landmarks=None, filter_opts=None, seg_opts=None,
                   map_opts=None, indicator_division=True, hue_shift=True,
                   outside_zero=True, regularization=1e-8):
    """Full pipeline: map both meshes to the sphere, optionally align, extract
    measurements, segment, fit per-patch PDFs, match patches, build the
    reconstruction transforms, and compose the target's appearance.

    Returns (result mesh, artifacts dict).  Failures raise StageError tagged
    with the stage name.
    """
    from .patch import SOURCE_CHANNELS, TARGET_CHANNELS
    weights = weights or MatchWeights()
    params = params or AssignParams()

    for ch in ("hue", "saturation"):
        if ch not in src_mesh.attributes:
            raise StageError("inputs", KeyError(f"source mesh lacks appearance channel '{ch}'"))
    if "bispectral_rgb" not in tar_mesh.attributes:
        raise StageError("inputs", KeyError("target mesh lacks 'bispectral_rgb'"))

    src_sm = _run_stage("map", _spherical, src_mesh, map_opts)
    tar_sm = _run_stage("map", _spherical, tar_mesh, map_opts)
    rotation = None
    if landmarks is not None:
        rotation = _run_stage("align", align_spheres, src_sm, tar_sm, landmarks)

    _run_stage("extract", _measure, src_mesh)
    _run_stage("extract", _measure, tar_mesh)

    src_pset = _run_stage("segment", _segment_mesh, src_mesh, filter_opts, seg_opts)
    tar_pset = _run_stage("segment", _segment_mesh, tar_mesh, filter_opts, seg_opts)

    src_bundles, _ = _run_stage("fit", _fit_bundles, src_sm, src_pset, SOURCE_CHANNELS,
                                order, hue_shift, outside_zero, regularization)
    tar_bundles, _ = _run_stage("fit", _fit_bundles, tar_sm, tar_pset, TARGET_CHANNELS,
                                order, False, outside_zero, regularization)

    src_energies = _run_stage("shape", _shape_energies, src_mesh, src_pset)
    tar_energies = _run_stage("shape", _shape_energies, tar_mesh, tar_pset)

    match = _run_stage("match", match_patches,
                       _features(src_pset, src_bundles, src_energies),
                       _features(tar_pset, tar_bundles, tar_energies), weights)

    def _assign():
        recons = []
        pdms = {}
        for m in sorted(match.matches, key=lambda m: m.tar_id):
            sb, tb = src_bundles[m.src_id], tar_bundles[m.tar_id]
            q_c = compute_pdm(sb.pdfs["concentration"], tb.pdfs["concentration"])
            q_m = compute_pdm(sb.pdfs["composition"], tb.pdfs["composition"])
            mm_cs = compute_material_map(sb.pdfs["concentration"], sb.pdfs["saturation"])
            mm_mh = compute_material_map(sb.pdfs["composition"], sb.pdfs["hue"])
            t_s = saturation_transform(mm_cs, q_c, params)
            t_h = hue_transform(mm_mh, q_m, params.mu_h)
            recons.append(PatchReconstruction(
                patch_id=m.tar_id,
                hue_pdf=apply_pdm(t_h, sb.pdfs["hue"]),
                sat_pdf=apply_pdm(t_s, sb.pdfs["saturation"]),
                hue_offset=sb.hue_offset,
                indicator=tb.indicator))
            pdms[m.tar_id] = {"q_c": q_c, "q_m": q_m, "mm_cs": mm_cs,
                              "mm_mh": mm_mh, "t_s": t_s, "t_h": t_h}
        return recons, pdms

    recons, pdms = _run_stage("assign", _assign)
    result = _run_stage("blend", blend_and_compose, tar_mesh, tar_sm, tar_pset,
                        recons, sigma=params.blend_sigma,
                        indicator_division=indicator_division)
    result.set_attribute("sphere_pos", tar_sm.sphere_positions)

    artifacts = {
        "src_sphere": src_sm, "tar_sphere": tar_sm, "alignment": rotation,
        "src_patches": src_pset, "tar_patches": tar_pset,
        "src_pdfs": src_bundles, "tar_pdfs": tar_bundles,
        "src_shape_energies": src_energies, "tar_shape_energies": tar_energies,
        "match": match, "pdms": pdms, "recon": recons,
    }
    return result, artifacts
