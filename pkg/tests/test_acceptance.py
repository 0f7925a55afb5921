"""End-to-end acceptance suite: one test per shipped guarantee.

Every fixture is built from the synthetic generator, so the suite is
self-contained.  The direct-fit oracle below recovers the withheld
appearance with plain per-patch least squares -- no matching, no
transforms, no blending -- and sets the representation floor that the
transfer accuracy bound is measured against.
"""

import time

import numpy as np
import pytest

from matstyle.harmonics import PDF, SphericalFitter, n_coeffs, sh_basis_matrix
from matstyle.material import circular_hue_distance, circular_mean
from matstyle.mesh import Mesh
from matstyle.patch import prefilter, segment
from matstyle.pipeline import PipelineConfig, evaluate, resolve_weights, run_all
from matstyle.spheremap import area_weighted_centroid, conformal_map_to_sphere
from matstyle.synthetic import (SyntheticSpec, egg_positions, gen_synthetic,
                                icosphere, rotation_matrix)
from matstyle.transfer import (PDM, AssignParams, apply_pdm, compute_material_map,
                               compute_pdm, frequency_scale, hue_transform,
                               pdm_cost, saturation_transform, style_transfer)


def direct_fit_residual(gt_mesh, sm, pset, order):
    """Representation floor for one mesh: fit the true hue and saturation
    per patch at the given order and compose the fits by vertex label.

    Hue is pre-shifted so each patch's area-weighted circular mean sits at
    0.5 before fitting, mirroring how the pipeline avoids fitting across the
    hue wrap.  Everything else is a straight masked least-squares fit; any
    transfer error above this floor is pipeline error, not representation
    error.
    """
    dirs = sm.sphere_positions
    areas = Mesh(dirs, gt_mesh.faces).vertex_areas()
    fitter = SphericalFitter(dirs, order, weights=areas)
    labels = pset.vertex_labels
    hue = gt_mesh.attribute("hue")
    sat = gt_mesh.attribute("saturation")
    hue_hat = np.zeros_like(hue)
    sat_hat = np.zeros_like(sat)
    for p in pset.patches:
        mask = p.vertex_mask(gt_mesh.n_vertices)
        offset = (0.5 - circular_mean(hue[mask], weights=areas[mask])) % 1.0
        fit_h = fitter.fit((hue + offset) % 1.0, mask=mask)
        fit_s = fitter.fit(sat, mask=mask)
        own = labels == p.id
        hue_hat[own] = (fitter.synthesize(fit_h)[own] - offset) % 1.0
        sat_hat[own] = np.clip(fitter.synthesize(fit_s)[own], 0.0, 1.0)
    return (float(circular_hue_distance(hue_hat, hue).mean()),
            float(np.abs(sat_hat - sat).mean()))


def test_identity_transfer_tracks_direct_fit_floor():
    # Same material distribution on both meshes: the reconstruction may lose
    # no more than 1% accuracy on top of what order-16 fitting itself loses.
    spec = SyntheticSpec(subdivisions=5, n_spots=5)
    src, tar, gt = gen_synthetic(spec, seed=7)
    start = time.monotonic()
    result, art = style_transfer(src, tar, order=16)
    elapsed = time.monotonic() - start
    report = evaluate(result, gt)
    res_h, res_s = direct_fit_residual(gt, art["tar_sphere"], art["tar_patches"], 16)
    assert report.accuracy_hue >= 0.99 - res_h
    assert report.accuracy_sat >= 0.99 - res_s
    assert elapsed < 120.0


def test_scaled_concentration_fixture_accuracy():
    # Five spots, target concentration at 0.8x: reconstructed appearance must
    # stay within 5% mean error on both channels.
    spec = SyntheticSpec(subdivisions=5, n_spots=5, tar_concentration_scale=0.8)
    src, tar, gt = gen_synthetic(spec, seed=7)
    start = time.monotonic()
    result, _ = style_transfer(src, tar, order=16)
    elapsed = time.monotonic() - start
    report = evaluate(result, gt)
    assert report.accuracy_hue >= 0.95
    assert report.accuracy_sat >= 0.95
    assert elapsed < 300.0


def test_random_pdf_pair_map_properties():
    # 1000 random coefficient pairs across orders 1..16.  The per-band map
    # must send source onto target, keep its rotation orthogonal and proper,
    # and have determinant (l_tar/l_src)^(2i+1) per band.
    rng = np.random.default_rng(11)
    for k in range(1000):
        order = 1 + k % 16
        a = rng.normal(size=n_coeffs(order))
        b = rng.normal(size=n_coeffs(order))
        a[0] = abs(a[0]) + 0.1   # keep the 1-d band off the reflection case
        b[0] = abs(b[0]) + 0.1
        src = PDF("m", order, a)
        tar = PDF("m", order, b)
        q = compute_pdm(src, tar)
        assert np.abs(apply_pdm(q, src).coeffs - tar.coeffs).max() < 1e-9
        ls, lt = src.band_norms(), tar.band_norms()
        for i in range(order + 1):
            dim = 2 * i + 1
            R = q.rotations[i]
            assert np.abs(R.T @ R - np.eye(dim)).max() < 1e-9
            assert abs(np.linalg.det(R) - 1.0) < 1e-7
            expected = (lt[i] / ls[i]) ** dim
            assert abs(q.band_det(i) - expected) <= 1e-7 * abs(expected)


SELF_MATCH_FIXTURES = (
    (SyntheticSpec(subdivisions=4, n_spots=5), 7),
    (SyntheticSpec(subdivisions=4, n_spots=4, spot_profile="flat", contrast=0.5), 3),
    (SyntheticSpec(shape="egg", subdivisions=4, n_spots=3), 5),
)


def test_self_match_costs_and_hand_example():
    # A patch matched against itself must cost exactly zero, and identical
    # meshes must match identically.  The doubled 2-d band pins the cost
    # formula by hand: |1 - det(2 * quarter turn)| = |1 - 4| = 3.
    for spec, seed in SELF_MATCH_FIXTURES:
        src, tar, _ = gen_synthetic(spec, seed=seed)
        _, art = style_transfer(src, tar, order=10)
        match = art["match"]
        assert match.assignment() == {t: t for t in match.assignment()}
        for m in match.matches:
            assert all(v == 0.0 for v in m.costs.values())
        for bundle in art["src_pdfs"].values():
            for pdf in bundle.pdfs.values():
                assert pdm_cost(compute_pdm(pdf, pdf)) == 0.0
    quarter_turn = np.array([[0.0, -1.0], [1.0, 0.0]])
    hand = PDM("x", 0, np.array([2.0]), [quarter_turn], set())
    assert pdm_cost(hand) == 3.0


def test_neutral_parameters_collapse_to_identity():
    # Identity material map, mu = 1, f_s = 0: both reconstruction chains must
    # reduce to the identity on every band.
    rng = np.random.default_rng(23)
    order = 16

    def draw(tag):
        c = rng.normal(size=n_coeffs(order))
        c[0] = abs(c[0]) + 0.5
        return PDF(tag, order, c)

    conc, sat = draw("concentration"), draw("saturation")
    comp, hue = draw("composition"), draw("hue")
    t_s = saturation_transform(compute_material_map(conc, sat),
                               compute_pdm(conc, conc),
                               AssignParams(mu_s=1.0, f_s=0.0))
    t_h = hue_transform(compute_material_map(comp, hue),
                        compute_pdm(comp, comp), mu_h=1.0)
    for t in (t_s, t_h):
        for i in range(order + 1):
            assert np.abs(t.matrix(i) - np.eye(2 * i + 1)).max() < 1e-9


def test_harmonic_basis_quality():
    # Monte Carlo Gram matrix through band 6 is close to the identity, exact
    # projection reproduces band-limited data, and rotating a band-limited
    # function leaves its per-band energy unchanged.
    rng = np.random.default_rng(0)
    dirs = rng.normal(size=(400_000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    B = sh_basis_matrix(dirs, 6)
    gram = B.T @ B * (4.0 * np.pi / len(dirs))
    assert np.abs(gram - np.eye(n_coeffs(6))).max() < 1e-2

    base = icosphere(4)
    grid = base.vertices / np.linalg.norm(base.vertices, axis=1, keepdims=True)
    fitter = SphericalFitter(grid, 10, weights=base.vertex_areas(),
                             regularization=0.0)
    coeffs = rng.normal(size=n_coeffs(10))
    truth = sh_basis_matrix(grid, 10) @ coeffs
    pdf = fitter.fit(truth)
    assert np.abs(fitter.synthesize(pdf) - truth).max() < 1e-8

    R = rotation_matrix(np.array([0.3, 1.0, 0.2]), 0.7)
    rotated = sh_basis_matrix(grid @ R, 10) @ coeffs   # same function, rotated
    pdf_rot = fitter.fit(rotated)
    assert np.abs(pdf_rot.band_norms() - pdf.band_norms()).max() < 1e-6


def test_sphere_mapping_quality():
    # The unit sphere is a fixed point; curved shapes map with monotone
    # energy, unit-norm output and a recentered area centroid.
    base = icosphere(4)
    unit = conformal_map_to_sphere(Mesh(base.vertices.copy(), base.faces.copy()))
    assert unit.converged
    assert np.abs(unit.sphere_positions - base.vertices).max() < 1e-6

    grid = base.vertices / np.linalg.norm(base.vertices, axis=1, keepdims=True)
    shapes = (base.vertices * np.array([1.0, 1.0, 1.4]), egg_positions(grid))
    for verts in shapes:
        mesh = Mesh(verts, base.faces.copy())
        sm = conformal_map_to_sphere(mesh)
        trace = np.asarray(sm.energy_trace)
        assert sm.converged
        assert (np.diff(trace) <= 1e-12).all()
        assert np.abs(np.linalg.norm(sm.sphere_positions, axis=1) - 1.0).max() < 1e-6
        assert np.linalg.norm(
            area_weighted_centroid(sm.sphere_positions, mesh.faces)) < 1e-4


def test_segmentation_recovers_planted_patches():
    # Flat-profile spots at contrast 0.5 with the default 3-edge-length
    # separation margin: exactly background + 4 spots for every seed.
    spec = SyntheticSpec(subdivisions=4, n_spots=4, spot_profile="flat",
                         contrast=0.5)
    for seed in range(1, 21):
        src, _, _ = gen_synthetic(spec, seed=seed)
        src.set_attribute("concentration_filtered",
                          prefilter(src, "concentration"))
        pset = segment(src, "concentration_filtered")
        assert not pset.degenerate
        assert len(pset.patches) == 5
        assert pset.background.id == 0


def test_presets_load_and_sigma_anchors():
    expected = {
        "paper-similar": (0.2, 0.2, 0.2, 0.2, 0.2),
        "paper-diffcolor": (0.2, 0.2, 0.2, 0.35, 0.05),
        "paper-teaser": (0.2, 0.2, 0.2, 0.25, 0.15),
    }
    for name, vals in expected.items():
        arr = resolve_weights(name).as_array()
        assert arr.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.abs(arr - np.array(vals)).max() < 1e-12
    # raw per-band frequency weights at order 150, f_s = 1
    assert frequency_scale(150, 1.0, 0, raw=True) == 151.0
    assert frequency_scale(150, 1.0, 150, raw=True) == 301.0


def test_identical_runs_reproduce_report_bytes(tmp_path):
    # Two full runs with the same config and seed, in different output
    # directories, must serialize byte-identical evaluation reports.
    synthetic = {"subdivisions": 4, "n_spots": 3, "spot_radius": [0.15, 0.25],
                 "tar_concentration_scale": 0.8}
    reports = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        config = PipelineConfig.from_dict({
            "out": str(out), "synthetic": synthetic, "order": 12, "seed": 9})
        run_all(config)
        reports.append((out / "report.json").read_bytes())
    assert reports[0] == reports[1]
