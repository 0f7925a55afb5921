import json
import os

import numpy as np
import pytest

from matstyle.cli import main as cli_main
from matstyle.mesh import Mesh, load_mesh
from matstyle.pipeline import (
    PRESETS,
    ConfigError,
    EvalReport,
    PipelineConfig,
    evaluate,
    load_landmarks,
    resolve_params,
    resolve_weights,
    run_all,
    save_landmarks,
    stage_fit,
    stage_gen,
    stage_map,
)
from matstyle.transfer import AssignParams, MatchWeights

SYNTH = {
    "subdivisions": 3,
    "n_spots": 2,
    "spot_radius": [0.25, 0.35],
    "tar_concentration_scale": 0.8,
}


def small_config(out, **kwargs):
    base = dict(out=str(out), synthetic=dict(SYNTH), order=8, seed=7)
    base.update(kwargs)
    return PipelineConfig(**base)


def flat_mesh(n=6):
    verts = np.zeros((n, 3))
    return Mesh(verts, np.zeros((0, 3), dtype=int))


def test_presets_are_normalized():
    assert set(PRESETS) == {"paper-similar", "paper-diffcolor", "paper-teaser"}
    for name, w in PRESETS.items():
        assert w.as_array().sum() == pytest.approx(1.0), name
    np.testing.assert_allclose(PRESETS["paper-similar"].as_array(), 0.2)
    assert PRESETS["paper-diffcolor"].composition == pytest.approx(0.35)
    assert PRESETS["paper-diffcolor"].concentration == pytest.approx(0.05)
    assert PRESETS["paper-teaser"].composition == pytest.approx(0.25)


def test_resolve_weights_forms():
    assert resolve_weights(None) == MatchWeights()
    w = MatchWeights(shape=0.4)
    assert resolve_weights(w) is w
    d = resolve_weights({"shape": 1.0, "area": 1.0, "curvature": 1.0,
                         "composition": 1.0, "concentration": 1.0})
    np.testing.assert_allclose(d.as_array(), 0.2)
    with pytest.raises(ConfigError, match="paper-diffcolor"):
        resolve_weights("paper-typo")
    with pytest.raises(ConfigError, match="bad weights"):
        resolve_weights({"bogus": 1.0})
    with pytest.raises(ConfigError):
        resolve_weights(3.5)


def test_resolve_params_forms():
    assert resolve_params(None) == AssignParams()
    p = resolve_params({"mu_s": 2.0, "f_s": 1.0})
    assert p.mu_s == 2.0 and p.f_s == 1.0
    with pytest.raises(ConfigError, match="bad assign params"):
        resolve_params({"mu_s": -1.0})


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError, match="order"):
        small_config(tmp_path, order=0)
    with pytest.raises(ConfigError, match="synthetic spec or src and tar"):
        PipelineConfig(out=str(tmp_path))
    with pytest.raises(ConfigError, match="bad synthetic"):
        PipelineConfig(out=str(tmp_path), synthetic={"shape": "cube"})
    with pytest.raises(ConfigError, match="unknown config keys"):
        PipelineConfig.from_dict({"out": str(tmp_path), "synthetic": {}, "bogus": 1})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        PipelineConfig.from_json(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="must be an object"):
        PipelineConfig.from_json(arr)


def test_config_hash_ignores_out_dir(tmp_path):
    a = small_config(tmp_path / "a")
    b = small_config(tmp_path / "b")
    c = small_config(tmp_path / "c", order=9)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert a.header()["config"] == a.config_hash()
    assert "matstyle" in a.header()["versions"]


def test_evaluate_identity_and_known_errors():
    m = flat_mesh(4)
    m.set_attribute("hue", np.array([0.1, 0.5, 0.9, 0.99]))
    m.set_attribute("saturation", np.array([0.2, 0.4, 0.6, 0.8]))
    rep = evaluate(m, m)
    assert rep.accuracy_hue == 1.0 and rep.accuracy_sat == 1.0
    assert rep.vertex_count == 4

    gt = flat_mesh(4)
    gt.set_attribute("hue", np.array([0.1, 0.5, 0.9, 0.01]))  # last wraps: err 0.02
    gt.set_attribute("saturation", np.array([0.2, 0.4, 0.6, 0.8]) + 0.02)
    rep = evaluate(m, gt)
    assert rep.mean_abs_err_hue == pytest.approx(0.02 / 4)
    assert rep.mean_abs_err_sat == pytest.approx(0.02)
    assert rep.accuracy_sat == pytest.approx(0.98)


def test_evaluate_mismatch_and_patch_breakdown():
    m = flat_mesh(4)
    m.set_attribute("hue", np.full(4, 0.5))
    m.set_attribute("saturation", np.full(4, 0.5))
    other = flat_mesh(3)
    other.set_attribute("hue", np.full(3, 0.5))
    other.set_attribute("saturation", np.full(3, 0.5))
    with pytest.raises(ValueError, match="reconstructed has 4, ground truth has 3"):
        evaluate(m, other)
    m2 = m.copy()
    m2.set_attribute("patch_id", np.array([0, 0, 1, 1], dtype=np.int32))
    rep = evaluate(m2, m)
    assert sum(p["vertex_count"] for p in rep.per_patch) == 4
    assert [p["patch_id"] for p in rep.per_patch] == [0, 1]


def test_eval_report_roundtrip(tmp_path):
    m = flat_mesh(3)
    m.set_attribute("hue", np.array([0.1, 0.2, 0.3]))
    m.set_attribute("saturation", np.array([0.3, 0.2, 0.1]))
    rep = evaluate(m, m, header={"config": "abc", "seed": 3})
    path = tmp_path / "report.json"
    rep.save(path)
    back = EvalReport.load(path)
    assert back.to_json() == rep.to_json()
    assert back.header["config"] == "abc"
    # serialization is canonical: keys sorted, no timestamps
    raw = path.read_text()
    assert raw == rep.to_json()


def test_landmarks_roundtrip(tmp_path):
    path = tmp_path / "lm.json"
    pairs = [([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), ([0.0, 0.0, 1.0], [0.0, 0.0, 1.0])]
    save_landmarks(pairs, path)
    lm = load_landmarks(path)
    assert len(lm.direction_pairs) == 2
    np.testing.assert_allclose(lm.direction_pairs[0][1], [0.0, 1.0, 0.0])
    empty = tmp_path / "empty.json"
    empty.write_text("{}")
    with pytest.raises(ValueError, match="no landmark pairs"):
        load_landmarks(empty)


def test_stage_gen_writes_rotation_landmarks(tmp_path):
    spec = dict(SYNTH)
    spec["tar_rotation"] = {"axis": [0.3, 1.0, 0.2], "angle": 0.7}
    paths = stage_gen(spec, 5, str(tmp_path))
    for k in ("src", "tar", "gt"):
        assert os.path.exists(paths[k])
    assert os.path.exists(paths["landmarks"])
    lm = load_landmarks(paths["landmarks"])
    assert len(lm.direction_pairs) == 6
    # target withholds appearance; truth carries it
    tar = load_mesh(paths["tar"])
    gt = load_mesh(paths["gt"])
    assert "hue" not in tar.attributes and "hue" in gt.attributes


def test_run_all_reports_and_caches(tmp_path):
    cfg = small_config(tmp_path / "run")
    summary = run_all(cfg)
    assert summary["eval"].accuracy_hue > 0.9
    assert summary["eval"].accuracy_sat > 0.9
    for stage in ("gen", "transfer"):
        assert summary["stages"][stage]["cache_hit"] is False
    again = run_all(small_config(tmp_path / "run"))
    for stage in ("gen", "transfer"):
        assert again["stages"][stage]["cache_hit"] is True, stage
    assert again["eval"].to_json() == summary["eval"].to_json()
    # changing a transfer knob invalidates transfer but not generation
    third = run_all(small_config(tmp_path / "run", order=9))
    assert third["stages"]["gen"]["cache_hit"] is True
    assert third["stages"]["transfer"]["cache_hit"] is False


def test_run_all_rotated_target_with_alignment(tmp_path):
    spec = dict(SYNTH)
    spec["tar_rotation"] = {"axis": [0.3, 1.0, 0.2], "angle": 0.7}
    spec["subdivisions"] = 4
    cfg = PipelineConfig(out=str(tmp_path / "rot"), synthetic=spec, order=12, seed=5)
    summary = run_all(cfg)
    rep = summary["eval"]
    assert rep.mean_abs_err_hue <= 0.02
    assert rep.mean_abs_err_sat <= 0.03
    assert os.path.exists(os.path.join(cfg.out, "alignment.json"))


def test_stage_fit_requires_prepared_mesh(tmp_path, make_icosphere):
    m = make_icosphere(1)
    from matstyle.mesh import save_mesh

    path = tmp_path / "bare.ply"
    save_mesh(m, path)
    with pytest.raises(ValueError, match="sphere_pos"):
        stage_fit(str(path), str(tmp_path / "out.json"), order=4)


def test_stage_map_writes_trace(tmp_path, make_icosphere):
    m = make_icosphere(2)
    from matstyle.mesh import save_mesh

    src = tmp_path / "m.ply"
    save_mesh(m, src)
    out = tmp_path / "mapped.ply"
    stage_map(str(src), str(out))
    mapped = load_mesh(out)
    assert "sphere_pos" in mapped.attributes
    trace = json.loads((tmp_path / "mapped.trace.json").read_text())
    assert trace["converged"] is True


def test_cli_exit_codes(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "out": str(tmp_path / "run"), "synthetic": SYNTH, "order": 8, "seed": 7,
    }))
    assert cli_main(["run-all", "--config", str(cfg_path)]) == 0
    assert (tmp_path / "run" / "report.json").exists()

    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text(json.dumps({"out": str(tmp_path / "x"), "order": 8}))
    assert cli_main(["run-all", "--config", str(bad_cfg)]) == 2

    assert cli_main(["map", "--mesh", str(tmp_path / "missing.ply"),
                     "--out", str(tmp_path / "o.ply")]) == 3

    # mismatched meshes: a stage failure, not a config or IO problem
    res = tmp_path / "run" / "result.ply"
    gt_small = tmp_path / "small.ply"
    import numpy as _np

    from matstyle.mesh import save_mesh
    from matstyle.synthetic import icosphere

    small = icosphere(1)
    small.set_attribute("hue", _np.zeros(small.n_vertices))
    small.set_attribute("saturation", _np.zeros(small.n_vertices))
    save_mesh(small, gt_small)
    assert cli_main(["eval", "--result", str(res), "--ground-truth", str(gt_small),
                     "--out", str(tmp_path / "rep.json")]) == 4


def test_cli_render_smoke(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "out": str(tmp_path / "run"), "synthetic": SYNTH, "order": 8, "seed": 7,
    }))
    assert cli_main(["run-all", "--config", str(cfg_path)]) == 0
    out = tmp_path / "plots"
    assert cli_main(["render", "--run-dir", str(tmp_path / "run"),
                     "--out", str(out)]) == 0
    written = list(out.iterdir())
    assert any(p.suffix == ".png" for p in written)
    assert any(p.suffix == ".ply" for p in written)
