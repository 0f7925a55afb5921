"""Material-driven appearance transfer between genus-zero meshes.

Learns, per spherical-harmonic band, how a source surface's material
distributions (composition, concentration) relate to its appearance (hue,
saturation), then replays those relationships on a target surface's material
distributions to reconstruct its withheld appearance.
"""

from .harmonics import (PDF, SphericalFitter, SphericalSamples, eval_pdf,
                        fit_pdf, n_coeffs, sh_basis, sh_basis_matrix, zero_pdf)
from .material import (FluorescenceParams, MaterialSample, circular_hue_distance,
                       circular_mean, extract_measurements, fluorescent_intensity,
                       hsv_to_rgb, rgb_to_hsv, rgb_to_yuv_luminance)
from .mesh import (HalfEdgeMesh, Mesh, MeshTopologyError, load_mesh,
                   normal_curvature_channel, save_mesh)
from .patch import (Patch, PatchSet, build_patch_pdfs, extend_boundary,
                    extract_boundary, prefilter, segment)
from .pipeline import (EvalReport, PRESETS, PipelineConfig, evaluate, run_all)
from .plyio import PlyParseError, read_ply, write_ply
from .spheremap import (LandmarkSet, SphericalMesh, align_spheres,
                        conformal_map_to_sphere, disk_shape_energy,
                        harmonic_energy, inverse_map, map_to_disk, mobius_center)
from .synthetic import Relation, SyntheticSpec, gen_synthetic, icosphere
from .transfer import (AssignParams, MaterialMap, Match, MatchResult,
                       MatchWeights, PDM, StageError, apply_pdm,
                       blend_and_compose, compute_material_map, compute_pdm,
                       hue_transform, invert_pdm, match_patches, pdm_cost,
                       rotation_between, saturation_transform, style_transfer)

__version__ = "0.1.0"

__all__ = [
    "AssignParams", "EvalReport", "FluorescenceParams", "HalfEdgeMesh",
    "LandmarkSet", "Match", "MatchResult", "MatchWeights", "MaterialMap",
    "MaterialSample", "Mesh", "MeshTopologyError", "PDF", "PDM", "PRESETS",
    "Patch", "PatchSet", "PipelineConfig", "PlyParseError", "Relation",
    "SphericalFitter", "SphericalMesh", "SphericalSamples", "StageError",
    "SyntheticSpec", "align_spheres", "apply_pdm", "blend_and_compose",
    "build_patch_pdfs", "circular_hue_distance", "circular_mean",
    "compute_material_map", "compute_pdm", "conformal_map_to_sphere",
    "disk_shape_energy", "eval_pdf", "evaluate", "extend_boundary",
    "extract_boundary", "extract_measurements", "fit_pdf",
    "fluorescent_intensity", "gen_synthetic", "harmonic_energy",
    "hsv_to_rgb", "hue_transform", "icosphere", "inverse_map", "invert_pdm",
    "load_mesh", "map_to_disk", "match_patches", "mobius_center", "n_coeffs",
    "normal_curvature_channel", "pdm_cost", "prefilter", "read_ply",
    "rgb_to_hsv", "rgb_to_yuv_luminance", "rotation_between", "run_all",
    "save_mesh", "saturation_transform", "segment", "sh_basis",
    "sh_basis_matrix", "style_transfer", "write_ply", "zero_pdf",
]
