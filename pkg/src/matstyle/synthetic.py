"""Synthetic ground-truth fixtures: spot-patterned genus-zero meshes whose
material channels (composition, concentration) and appearance channels (hue,
saturation) are linked by known per-patch affine relations.

Fields are painted analytically by unit direction on an icosphere tessellation
(optionally deformed into an egg), so rotated targets and scaled-concentration
targets have exact ground truth.  Bispectral color encodes composition as its
hue and concentration as its BT.601 luminance, then is quantized to 8 bits to
match on-disk storage.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .mesh import Mesh
from .material import hsv_to_rgb, rgb_to_yuv_luminance


def icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return verts, faces


def icosphere(subdivisions, radius=1.0):
    """Unit icosphere mesh; V = 10*4^s + 2."""
    verts, faces = icosahedron()
    verts = [v for v in verts]
    for _ in range(subdivisions):
        midpoint = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for f in faces:
            a, b, c = int(f[0]), int(f[1]), int(f[2])
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.asarray(new_faces, dtype=np.int64)
    return Mesh(np.asarray(verts) * radius, faces)


def egg_positions(directions, a=1.0, b=1.3, taper=0.25):
    """Map unit directions onto a tapered ellipsoid (egg) surface."""
    d = np.asarray(directions, dtype=np.float64)
    w = 1.0 - taper * np.clip(d[:, 2], 0.0, 1.0)
    return np.column_stack([a * d[:, 0] * w, a * d[:, 1] * w, b * d[:, 2]])


@dataclass(frozen=True)
class Relation:
    """Pointwise affine material-to-appearance link: s = a_s*c + b_s, h = a_h*m + b_h."""
    a_s: float = 0.9
    b_s: float = 0.0
    a_h: float = 0.85
    b_h: float = 0.05

    def saturation(self, c):
        return self.a_s * np.asarray(c) + self.b_s

    def hue(self, m):
        return self.a_h * np.asarray(m) + self.b_h


@dataclass(frozen=True)
class SyntheticSpec:
    shape: str = "sphere"                 # sphere | egg
    subdivisions: int = 4
    n_spots: int = 5
    spot_radius: tuple = (0.22, 0.34)     # radians
    contrast: float = 0.55                # peak concentration minus background
    base_concentration: float = 0.15
    base_composition: float = 0.5
    composition_range: tuple = (0.2, 0.8)
    spot_profile: str = "dome"            # dome | flat
    dome_slope: float = 0.45
    relation: Relation = field(default_factory=Relation)
    patch_relations: dict = None          # optional per-patch-id Relation overrides
    noise_sigma: float = 0.0
    min_separation: float = None          # center margin in radians; default 3 mean edges
    tar_concentration_scale: float = 1.0
    tar_rotation: tuple = None            # (axis 3-vector, angle radians)
    n_landmarks: int = 6
    egg_params: tuple = (1.0, 1.3)
    bispectral_sat: float = 0.25

    def __post_init__(self):
        if self.n_spots < 0:
            raise ValueError("n_spots must be >= 0")
        if not 0.0 < self.contrast <= 1.0:
            raise ValueError("contrast must be in (0, 1]")
        if self.spot_profile not in ("dome", "flat"):
            raise ValueError(f"unknown spot profile '{self.spot_profile}'")
        if self.shape not in ("sphere", "egg"):
            raise ValueError(f"unknown shape '{self.shape}'")

    def to_dict(self):
        d = asdict(self)
        d["relation"] = asdict(self.relation)
        if self.patch_relations is not None:
            d["patch_relations"] = {str(k): asdict(v)
                                    for k, v in self.patch_relations.items()}
        if self.tar_rotation is not None:
            axis, angle = self.tar_rotation
            d["tar_rotation"] = {"axis": list(np.asarray(axis, dtype=float)),
                                 "angle": float(angle)}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "relation" in d and isinstance(d["relation"], dict):
            d["relation"] = Relation(**d["relation"])
        if d.get("patch_relations"):
            d["patch_relations"] = {int(k): Relation(**v) if isinstance(v, dict) else v
                                    for k, v in d["patch_relations"].items()}
        rot = d.get("tar_rotation")
        if isinstance(rot, dict):
            d["tar_rotation"] = (tuple(rot["axis"]), float(rot["angle"]))
        elif rot is not None:
            d["tar_rotation"] = (tuple(rot[0]), float(rot[1]))
        for key in ("spot_radius", "composition_range", "egg_params"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def rotation_matrix(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def _place_spots(spec, rng, margin):
    """Rejection-sample non-overlapping spot centers and radii."""
    centers, radii = [], []
    r_lo, r_hi = spec.spot_radius
    for k in range(spec.n_spots):
        for attempt in range(400):
            u = rng.normal(size=3)
            u /= np.linalg.norm(u)
            r = float(rng.uniform(r_lo, r_hi))
            ok = all(np.arccos(np.clip(u @ c, -1, 1)) >= r + rc + margin
                     for c, rc in zip(centers, radii))
            if ok:
                centers.append(u)
                radii.append(r)
                break
        else:
            raise RuntimeError(
                f"spot placement failed for spot {k + 1}/{spec.n_spots}: "
                "reduce n_spots, radii or separation")
    return np.asarray(centers).reshape(-1, 3), np.asarray(radii)


def _paint(spec, dirs, centers, radii, compositions):
    """Concentration, composition and label fields at unit directions."""
    V = len(dirs)
    c = np.full(V, spec.base_concentration)
    m = np.full(V, spec.base_composition)
    labels = np.zeros(V, dtype=np.int32)
    for k, (u, r) in enumerate(zip(centers, radii)):
        t = np.arccos(np.clip(dirs @ u, -1.0, 1.0)) / r
        inside = t < 1.0
        if spec.spot_profile == "flat":
            w = 1.0
        else:
            w = 1.0 - spec.dome_slope * t[inside] ** 2
        c[inside] = spec.base_concentration + spec.contrast * w
        m[inside] = compositions[k]
        labels[inside] = k + 1
    return c, m, labels


def _relation_for(spec, patch_id):
    if spec.patch_relations and patch_id in spec.patch_relations:
        return spec.patch_relations[patch_id]
    return spec.relation


def _appearance(spec, c, m, labels):
    h = np.empty_like(m)
    s = np.empty_like(c)
    for pid in np.unique(labels):
        rel = _relation_for(spec, int(pid))
        idx = labels == pid
        h[idx] = rel.hue(m[idx])
        s[idx] = rel.saturation(c[idx])
    if h.min() < 0.0 or h.max() >= 1.0 or s.min() < 0.0 or s.max() > 1.0:
        raise ValueError("relation drives hue or saturation outside the unit interval")
    return h, s


def encode_bispectral(m, c, sat=0.25):
    """8-bit-quantized RGB whose HSV hue is m and BT.601 luminance is c."""
    m = np.asarray(m, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    unit = hsv_to_rgb(np.column_stack([m, np.full_like(m, sat), np.ones_like(m)]))
    yf = rgb_to_yuv_luminance(unit)
    if (c > yf).any():
        raise ValueError("concentration too high to encode at this bispectral saturation")
    rgb = unit * (c / yf)[:, None]
    return np.round(rgb * 255.0) / 255.0


def gen_synthetic(spec, seed):
    """Build (source, target, ground_truth) meshes for a synthetic pattern.

    The source carries material and appearance channels; the target carries
    material channels only; ground truth is the target plus its withheld
    appearance channels.  Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    base = icosphere(spec.subdivisions)
    dirs = base.vertices / np.linalg.norm(base.vertices, axis=1, keepdims=True)
    mean_edge_angle = base.mean_edge_length()

    margin = spec.min_separation
    if margin is None:
        margin = 3.0 * mean_edge_angle
    centers, radii = _place_spots(spec, rng, margin)
    lo, hi = spec.composition_range
    if spec.n_spots > 0:
        compositions = lo + (hi - lo) * (rng.permutation(spec.n_spots) + 0.5) / spec.n_spots
    else:
        compositions = np.zeros(0)

    if spec.shape == "egg":
        a, b = spec.egg_params
        positions = egg_positions(dirs, a=a, b=b)
    else:
        positions = dirs.copy()

    def build(center_set, conc_scale):
        c, m, labels = _paint(spec, dirs, center_set, radii, compositions)
        c = c * conc_scale
        h, s = _appearance(spec, c, m, labels)
        c_noisy = c if spec.noise_sigma == 0 else np.clip(
            c + rng.normal(0.0, spec.noise_sigma, len(c)), 0.01, 0.97)
        attrs = {
            "bispectral_rgb": encode_bispectral(m, c_noisy, sat=spec.bispectral_sat),
            "composition": m,
            "concentration": c,
            "true_patch_id": labels,
            "hue": h,
            "saturation": s,
        }
        mesh = Mesh(positions, base.faces.copy(), attrs)
        mesh.metadata["spots"] = {
            "centers": center_set.tolist(), "radii": radii.tolist(),
            "compositions": compositions.tolist(),
        }
        return mesh

    src = build(centers, 1.0)

    tar_centers = centers
    landmarks = None
    if spec.tar_rotation is not None:
        axis, angle = spec.tar_rotation
        R = rotation_matrix(axis, angle)
        tar_centers = centers @ R.T
        probe = icosahedron()[0][:spec.n_landmarks]
        landmarks = [{"src_dir": p.tolist(), "tar_dir": (R @ p).tolist()} for p in probe]

    gt = build(tar_centers, spec.tar_concentration_scale)
    tar = gt.copy()
    del tar.attributes["hue"]
    del tar.attributes["saturation"]
    if landmarks is not None:
        tar.metadata["landmark_pairs"] = landmarks
        gt.metadata["landmark_pairs"] = landmarks
    for mesh in (src, tar, gt):
        mesh.metadata["seed"] = int(seed)
    return src, tar, gt
