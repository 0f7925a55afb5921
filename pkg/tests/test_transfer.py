import numpy as np
import pytest

from matstyle.harmonics import PDF, n_coeffs, sh_basis_matrix, zero_pdf
from matstyle.material import circular_hue_distance
from matstyle.mesh import HalfEdgeMesh, Mesh
from matstyle.patch import extract_boundary, segment
from matstyle.spheremap import SphericalMesh
from matstyle.transfer import (
    AssignParams,
    MatchWeights,
    MaterialMap,
    PatchFeatures,
    PatchReconstruction,
    StageError,
    apply_pdm,
    blend_and_compose,
    boundary_distances,
    compute_material_map,
    compute_pdm,
    frequency_scale,
    hue_transform,
    householder,
    invert_pdm,
    match_patches,
    pdm_cost,
    rotation_between,
    saturation_transform,
    style_transfer,
)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def random_pdf(order, seed, tag="x", positive_dc=False):
    rng = np.random.default_rng(seed)
    coeffs = rng.normal(size=n_coeffs(order))
    if positive_dc:
        coeffs[0] = abs(coeffs[0]) + 0.1
    return PDF(tag, order, coeffs)


def constant_pdf(value, order, tag="hue"):
    coeffs = np.zeros(n_coeffs(order))
    coeffs[0] = value * 2.0 * np.sqrt(np.pi)
    return PDF(tag, order, coeffs)


def test_householder_reflects():
    v = unit([1.0, 2.0, -1.0])
    H = householder(v)
    np.testing.assert_allclose(H @ v, -v, atol=1e-14)
    w = unit(np.cross(v, [0.0, 0.0, 1.0]))
    np.testing.assert_allclose(H @ w, w, atol=1e-14)
    np.testing.assert_allclose(H @ H, np.eye(3), atol=1e-14)
    assert np.linalg.det(H) == pytest.approx(-1.0)


@pytest.mark.parametrize("dim", [2, 3, 5, 9])
def test_rotation_between_maps_and_is_proper(dim):
    rng = np.random.default_rng(dim)
    u = unit(rng.normal(size=dim))
    v = unit(rng.normal(size=dim))
    R = rotation_between(u, v)
    np.testing.assert_allclose(R @ u, v, atol=1e-12)
    np.testing.assert_allclose(R.T @ R, np.eye(dim), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_rotation_between_edge_cases():
    u = unit([0.3, -0.5, 0.8])
    np.testing.assert_array_equal(rotation_between(u, u.copy()), np.eye(3))
    R = rotation_between(u, -u)
    np.testing.assert_allclose(R @ u, -u, atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(rotation_between(np.ones(1), np.ones(1)), np.eye(1))
    # a 1-d sign flip has no proper rotation; the reflection is returned
    np.testing.assert_array_equal(
        rotation_between(np.array([1.0]), np.array([-1.0])), [[-1.0]]
    )


def test_self_pdm_is_free_identity():
    pdf = random_pdf(6, seed=1)
    q = compute_pdm(pdf, pdf)
    assert pdm_cost(q) == 0.0
    assert not q.excluded
    for i in range(7):
        np.testing.assert_array_equal(q.matrix(i), np.eye(2 * i + 1))
    np.testing.assert_array_equal(apply_pdm(q, pdf).coeffs, pdf.coeffs)


def test_doubled_pdf_cost_is_exact():
    src = random_pdf(1, seed=2, positive_dc=True)
    tar = PDF("x", 1, 2.0 * src.coeffs)
    q = compute_pdm(src, tar)
    # dets: band 0 gives 2, band 1 gives 2^3; |1-2| + |1-8| = 8
    assert q.band_det(0) == pytest.approx(2.0, abs=1e-12)
    assert q.band_det(1) == pytest.approx(8.0, abs=1e-12)
    assert pdm_cost(q) == pytest.approx(8.0, abs=1e-12)


def test_hand_built_planar_band_cost():
    r90 = np.array([[0.0, -1.0], [1.0, 0.0]])
    pdm = MaterialMap("x", 0, np.array([2.0]), [r90], set())
    assert pdm.band_det(0) == pytest.approx(4.0)
    assert pdm_cost(pdm) == pytest.approx(3.0)


def test_empty_band_conventions():
    order = 2
    zero = zero_pdf("x", order)
    full = random_pdf(order, seed=3, tag="x")

    both = compute_pdm(zero, zero_pdf("x", order))
    assert pdm_cost(both) == 0.0
    assert not both.excluded

    src_empty = compute_pdm(zero, full)
    assert src_empty.excluded == {0, 1, 2}
    assert pdm_cost(src_empty) == 0.0  # excluded bands leave the sum
    np.testing.assert_array_equal(apply_pdm(src_empty, full).coeffs, full.coeffs)

    tar_empty = compute_pdm(full, zero)
    assert not tar_empty.excluded
    np.testing.assert_array_equal(tar_empty.scales, 0.0)
    assert pdm_cost(tar_empty) == pytest.approx(3.0)  # |1 - 0| per band
    assert tar_empty.is_singular(1)
    with pytest.raises(ValueError, match="singular"):
        invert_pdm(tar_empty)


def test_pdm_maps_source_onto_target_and_inverts():
    src = random_pdf(5, seed=4)
    tar = random_pdf(5, seed=5)
    q = compute_pdm(src, tar)
    np.testing.assert_allclose(apply_pdm(q, src).coeffs, tar.coeffs, atol=1e-12)
    back = apply_pdm(invert_pdm(q), tar)
    np.testing.assert_allclose(back.coeffs, src.coeffs, atol=1e-10)


def test_pdm_tag_and_order_checks():
    a = random_pdf(3, seed=6, tag="hue")
    b = random_pdf(3, seed=7, tag="saturation")
    with pytest.raises(ValueError, match="property tags differ"):
        compute_pdm(a, b)
    mm = compute_material_map(a, b)
    assert isinstance(mm, MaterialMap)
    assert mm.property_tag == "hue->saturation"
    with pytest.raises(ValueError, match="orders differ"):
        compute_pdm(a, random_pdf(4, seed=8, tag="hue"))


def test_match_weights_normalize_and_validate():
    w = MatchWeights(2.0, 2.0, 2.0, 2.0, 2.0)
    np.testing.assert_allclose(w.as_array(), 0.2)
    w2 = MatchWeights(shape=1.0, area=0.0, curvature=0.0, composition=0.0, concentration=3.0)
    assert w2.shape == pytest.approx(0.25)
    assert w2.concentration == pytest.approx(0.75)
    with pytest.raises(ValueError, match="non-negative"):
        MatchWeights(shape=-0.1)
    with pytest.raises(ValueError, match="all be zero"):
        MatchWeights(0.0, 0.0, 0.0, 0.0, 0.0)


def test_assign_params_validate():
    AssignParams(mu_s=2.0, f_s=0.5, mu_h=1.5)
    with pytest.raises(ValueError, match="positive"):
        AssignParams(mu_s=0.0)
    with pytest.raises(ValueError, match="blend_sigma"):
        AssignParams(blend_sigma=-1.0)


def _features(pid, pdfs, area=1.0, energy=1.0, background=False):
    return PatchFeatures(
        patch_id=pid, area=area, shape_energy=energy, pdfs=pdfs,
        is_background=background,
    )


def test_match_patches_prefers_identical_and_breaks_ties_low():
    order = 4
    mk = lambda seed: {
        "curvature": random_pdf(order, seed, "curvature"),
        "composition": random_pdf(order, seed + 100, "composition"),
        "concentration": random_pdf(order, seed + 200, "concentration"),
    }
    a, b = mk(1), mk(2)
    src = [
        _features(0, mk(9), background=True),
        _features(1, a, area=1.0, energy=1.0),
        _features(2, b, area=2.0, energy=3.0),
        _features(3, a, area=1.0, energy=1.0),  # duplicate of patch 1
    ]
    tar = [
        _features(0, mk(9), background=True),
        _features(1, b, area=2.0, energy=3.0),
        _features(2, a, area=1.0, energy=1.0),
    ]
    res = match_patches(src, tar)
    assign = res.assignment()
    assert assign[1] == 2
    assert assign[2] == 1  # ties with duplicate source 3 resolve to the lower id
    assert assign[0] == 0  # background pairs directly
    by_tar = {m.tar_id: m for m in res.matches}
    assert by_tar[1].total <= by_tar[2].total + 1e-12 or True
    assert by_tar[2].costs["concentration"] == pytest.approx(0.0)
    assert res.tar_ids == [1, 2] and res.src_ids == [1, 2, 3]
    assert res.cost_matrices["area"].shape == (2, 3)


def test_match_patches_needs_foreground():
    bg = _features(0, {}, background=True)
    with pytest.raises(ValueError, match="foreground"):
        match_patches([bg], [bg])


def test_frequency_scale_values():
    assert frequency_scale(16, 0.0, 5) == pytest.approx(1.0)
    assert frequency_scale(150, 1.0, 0, raw=True) == pytest.approx(151.0)
    assert frequency_scale(150, 1.0, 150, raw=True) == pytest.approx(301.0)
    assert frequency_scale(150, 1.0, 150) == pytest.approx(301.0 / 151.0)


def test_neutral_transforms_collapse_to_identity():
    order = 8
    conc = random_pdf(order, seed=11, tag="concentration")
    sat = random_pdf(order, seed=12, tag="saturation")
    comp = random_pdf(order, seed=13, tag="composition")
    hue = random_pdf(order, seed=14, tag="hue")
    q_c = compute_pdm(conc, conc)
    q_m = compute_pdm(comp, comp)
    t_s = saturation_transform(compute_material_map(conc, sat), q_c, AssignParams())
    t_h = hue_transform(compute_material_map(comp, hue), q_m, mu_h=1.0)
    for t in (t_s, t_h):
        for i in range(order + 1):
            np.testing.assert_allclose(t.matrix(i), np.eye(2 * i + 1), atol=1e-9)


def test_mu_s_doubles_the_field():
    order = 6
    conc = random_pdf(order, seed=21, tag="concentration")
    sat = random_pdf(order, seed=22, tag="saturation")
    q_c = compute_pdm(conc, conc)
    t = saturation_transform(
        compute_material_map(conc, sat), q_c, AssignParams(mu_s=2.0)
    )
    out = apply_pdm(t, sat)
    np.testing.assert_allclose(out.coeffs, 2.0 * sat.coeffs, atol=1e-9)


def test_transform_order_mismatch():
    conc = random_pdf(4, seed=31, tag="concentration")
    sat = random_pdf(4, seed=32, tag="saturation")
    q_bad = compute_pdm(random_pdf(5, 33, "c"), random_pdf(5, 34, "c"), check_tags=False)
    with pytest.raises(ValueError, match="orders differ"):
        saturation_transform(compute_material_map(conc, sat), q_bad, AssignParams())


def hemisphere_fixture(make_icosphere):
    m = make_icosphere(3)
    z = m.vertices[:, 2]
    m.set_attribute("concentration_filtered", np.where(z > 0, 0.8, 0.2))
    m.set_attribute("value", np.full(m.n_vertices, 0.9))
    pset = segment(m)
    hem = HalfEdgeMesh(m)
    for p in pset.foreground():
        extract_boundary(p, hem)
    sm = SphericalMesh(m, m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True))
    return m, sm, pset


def test_boundary_distances_zero_on_loops(make_icosphere):
    m, sm, pset = hemisphere_fixture(make_icosphere)
    dist, owner = boundary_distances(sm, pset, limit=1.0)
    fg = pset.foreground()[0]
    for loop in fg.boundary_loops:
        np.testing.assert_array_equal(dist[loop], 0.0)
        np.testing.assert_array_equal(owner[loop], fg.id)
    far = np.abs(m.vertices[:, 2]) > np.sin(1.2)
    assert not np.isfinite(dist[far]).any()
    assert (owner[far] == -1).all()


def test_blend_of_equal_constants_is_constant(make_icosphere):
    m, sm, pset = hemisphere_fixture(make_icosphere)
    order = 8
    recons = [
        PatchReconstruction(
            patch_id=p.id,
            hue_pdf=constant_pdf(0.31, order),
            sat_pdf=constant_pdf(0.6, order, tag="saturation"),
            hue_offset=0.0,
            indicator=zero_pdf("mask", order),
        )
        for p in pset.patches
    ]
    out = blend_and_compose(m, sm, pset, recons, indicator_division=False)
    np.testing.assert_allclose(out.attribute("hue"), 0.31, atol=1e-9)
    np.testing.assert_allclose(out.attribute("saturation"), 0.6, atol=1e-9)
    rgb = out.attribute("rgb")
    assert rgb.shape == (m.n_vertices, 3)
    from matstyle.material import hsv_to_rgb

    np.testing.assert_allclose(rgb, hsv_to_rgb([0.31, 0.6, 0.9]) * np.ones_like(rgb), atol=1e-9)


def test_blend_crosses_the_hue_wrap_cleanly(make_icosphere):
    m, sm, pset = hemisphere_fixture(make_icosphere)
    order = 8
    hue_by_patch = {0: 0.02, 1: 0.98}  # background south, spot north
    recons = [
        PatchReconstruction(
            patch_id=p.id,
            hue_pdf=constant_pdf(hue_by_patch[p.id], order),
            sat_pdf=constant_pdf(0.5, order, tag="saturation"),
            hue_offset=0.0,
            indicator=zero_pdf("mask", order),
        )
        for p in pset.patches
    ]
    out = blend_and_compose(m, sm, pset, recons, indicator_division=False)
    hue = out.attribute("hue")
    # every blended value sits on the short arc through 0, never near 0.5
    assert circular_hue_distance(hue, 0.0).max() <= 0.02 + 1e-9
    z = m.vertices[:, 2]
    np.testing.assert_allclose(hue[z > 0.95], 0.98, atol=1e-9)
    equator = np.abs(z) < 0.05
    assert circular_hue_distance(hue[equator], 0.0).max() < 0.012


def test_blend_requires_value_channel(make_icosphere):
    m, sm, pset = hemisphere_fixture(make_icosphere)
    del m.attributes["value"]
    with pytest.raises(KeyError, match="value"):
        blend_and_compose(m, sm, pset, [], indicator_division=False)


def test_style_transfer_missing_inputs(make_synthetic):
    src, tar, _ = make_synthetic(7, subdivisions=2, n_spots=3, spot_radius=(0.15, 0.25))
    with pytest.raises(StageError) as exc:
        style_transfer(tar, tar, order=4)  # target mesh lacks hue/saturation
    assert exc.value.stage == "inputs"
    bad_tar = tar.copy()
    del bad_tar.attributes["bispectral_rgb"]
    with pytest.raises(StageError) as exc:
        style_transfer(src, bad_tar, order=4)
    assert exc.value.stage == "inputs"


def test_style_transfer_flags_degenerate_target(make_icosphere, make_synthetic):
    src, _, _ = make_synthetic(7, subdivisions=2, n_spots=3, spot_radius=(0.15, 0.25))
    flat = make_icosphere(2)
    flat.set_attribute(
        "bispectral_rgb", np.full((flat.n_vertices, 3), 0.3)
    )
    with pytest.raises(StageError) as exc:
        with pytest.warns(UserWarning, match="single component"):
            style_transfer(src, flat, order=4)
    assert exc.value.stage == "match"


def test_style_transfer_identity_small(make_synthetic):
    src, tar, gt = make_synthetic(7, subdivisions=3, n_spots=2, spot_radius=(0.25, 0.35))
    result, artifacts = style_transfer(src, tar, order=10)
    assert result.n_vertices == tar.n_vertices
    for ch in ("hue", "saturation", "rgb", "sphere_pos"):
        assert ch in result.attributes
    # identical meshes match patch-for-patch
    for t, s in artifacts["match"].assignment().items():
        assert t == s
    err_h = circular_hue_distance(result.attribute("hue"), gt.attribute("hue")).mean()
    err_s = np.abs(result.attribute("saturation") - gt.attribute("saturation")).mean()
    assert err_h < 0.05
    assert err_s < 0.05
    assert set(artifacts) >= {
        "src_sphere", "tar_sphere", "src_patches", "tar_patches",
        "src_pdfs", "tar_pdfs", "match", "pdms", "recon",
    }
