import filecmp
import json
import math

import numpy as np
import pytest

import cornerpde as cp
import cornerpde.experiment
from cornerpde import NumericError, ValidationError


def mini_square_config(**overrides):
    d = {
        "name": "mini-square",
        "domain": {"kind": "square"},
        "mesh": {"type": "uniform",
                 "h_sequence": [0.25, 0.125, 0.0625, 0.03125],
                 "reference_refinements": 0},
        "problem": {"f": "manufactured-square", "T": 0.25,
                    "n_steps": {"rule": "dt-h2", "factor": 1.0}},
        "smoothness": {"kondratiev": {"m": 1, "p": 2.0, "a": 0.0},
                       "nterm_log2_range": [5, 9],
                       "uniform_errors": "exact-l2",
                       "l2_reference": "exact"},
        "seed": 0,
    }
    d.update(overrides)
    return d


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_presets_validate_and_roundtrip():
    names = [c.name for c in cp.presets()]
    assert names == ["square-smooth", "lshape-linear", "lshape-semilinear", "slit-pencil"]
    for name in names:
        cfg = cp.preset(name)
        cfg.validate()
        d = cfg.to_dict()
        again = cp.ExperimentConfig.from_dict(d)
        assert again.to_dict() == d
        assert "output_dir" not in d      # echoes must not pin paths


def test_unknown_preset_lists_available():
    with pytest.raises(ValidationError, match="square-smooth"):
        cp.preset("frobnicate")


def test_unknown_fields_rejected():
    with pytest.raises(ValidationError, match="unknown field 'frobnicate'"):
        cp.ExperimentConfig.from_dict(mini_square_config(frobnicate=1))
    bad_mesh = mini_square_config()
    bad_mesh["mesh"]["h_values"] = [0.5]
    with pytest.raises(ValidationError, match="mesh: unknown field 'h_values'"):
        cp.ExperimentConfig.from_dict(bad_mesh).validate()


def test_missing_required_fields():
    with pytest.raises(ValidationError, match="name"):
        cp.ExperimentConfig.from_dict({"domain": {"kind": "square"}})
    with pytest.raises(ValidationError, match="domain"):
        cp.ExperimentConfig.from_dict({"name": "x"})


def test_validation_names_offending_field():
    bad = mini_square_config(domain={"kind": "sector", "theta": 3 * math.pi, "radius": 1.0},
                             mesh=None, problem=None, smoothness=None)
    with pytest.raises(ValidationError, match=r"domain\.theta"):
        cp.ExperimentConfig.from_dict(bad).validate()


def test_sector_runs_pencil_stage_only():
    bad = mini_square_config(domain={"kind": "sector", "theta": math.pi, "radius": 1.0})
    with pytest.raises(ValidationError, match="pencil stage only"):
        cp.ExperimentConfig.from_dict(bad).validate()


def test_galerkin_route_needs_fixed_steps_and_doubling():
    cfg = mini_square_config()
    cfg["problem"] = {"f": "one", "T": 1.0, "n_steps": {"rule": "fixed", "value": 16}}
    cfg["smoothness"]["uniform_errors"] = "galerkin-energy"
    cfg["smoothness"]["l2_reference"] = "self"
    cfg["mesh"]["reference_refinements"] = 1
    cp.ExperimentConfig.from_dict(cfg).validate()      # well-formed baseline
    undoubled = json.loads(json.dumps(cfg))
    undoubled["mesh"]["h_sequence"] = [0.25, 0.125, 0.1, 0.05]
    with pytest.raises(ValidationError, match="double"):
        cp.ExperimentConfig.from_dict(undoubled).validate()
    varying_dt = json.loads(json.dumps(cfg))
    varying_dt["problem"]["n_steps"] = {"rule": "dt-h2", "factor": 1.0}
    with pytest.raises(ValidationError):
        cp.ExperimentConfig.from_dict(varying_dt).validate()


def test_exact_route_needs_known_solution():
    cfg = mini_square_config()
    cfg["problem"]["f"] = "one"
    with pytest.raises(ValidationError, match="exact"):
        cp.ExperimentConfig.from_dict(cfg).validate()


# ---------------------------------------------------------------------------
# JSON emitter
# ---------------------------------------------------------------------------

def test_dumps_json_roundtrips_floats():
    obj = {"a": 1 / 3, "b": [1.0, 2.5e-17, -0.0], "c": {"t": True, "n": None, "i": 7}}
    text = cp.dumps_json(obj)
    back = json.loads(text)
    assert back["a"] == 1 / 3                       # .17g survives reparsing
    assert back["b"] == [1.0, 2.5e-17, -0.0]
    assert back["c"] == {"t": True, "n": None, "i": 7}
    # whole floats keep a decimal point so a reload stays float-typed
    assert '"b": [\n' in text and "1.0" in text
    assert isinstance(back["b"][0], float)


def test_dumps_json_rejects_nonfinite():
    with pytest.raises(NumericError):
        cp.dumps_json({"x": math.inf})
    with pytest.raises(NumericError):
        cp.dumps_json({"x": math.nan})


def test_resolve_output_root(monkeypatch, tmp_path):
    monkeypatch.delenv("CORNERPDE_OUT", raising=False)
    assert cp.resolve_output_root() == "cornerpde_out"
    assert cp.resolve_output_root("explicit") == "explicit"
    monkeypatch.setenv("CORNERPDE_OUT", str(tmp_path / "envroot"))
    assert cp.resolve_output_root() == str(tmp_path / "envroot")
    assert cp.resolve_output_root("explicit") == "explicit"


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

def test_run_experiment_reruns_byte_identical(tmp_path):
    cfg = cp.ExperimentConfig.from_dict(mini_square_config())
    rep_a = cp.run_experiment(cfg, str(tmp_path / "a"))
    rep_b = cp.run_experiment(cfg, str(tmp_path / "b"))
    assert rep_a.manifest == rep_b.manifest
    files = sorted(rep_a.manifest)
    assert "report.json" in files
    assert "errors.csv" in files and "nterm.csv" in files
    for name in files:
        fa = tmp_path / "a" / "mini-square" / name
        fb = tmp_path / "b" / "mini-square" / name
        assert filecmp.cmp(fa, fb, shallow=False), name
    # timings are wall-clock and live outside the determinism contract
    assert (tmp_path / "a" / "mini-square" / "timings.txt").exists()
    assert "timings.txt" not in rep_a.manifest
    on_disk = json.loads((tmp_path / "a" / "mini-square" / "manifest.json").read_text())
    assert on_disk["files"] == rep_a.manifest


def test_run_experiment_report_contents(tmp_path):
    cfg = cp.ExperimentConfig.from_dict(mini_square_config())
    report = cp.run_experiment(cfg, str(tmp_path))
    body = json.loads((tmp_path / "mini-square" / "report.json").read_text())
    assert set(body) == {"config", "pencil", "results", "smoothness",
                         "iterations", "manifest"}
    assert body["config"]["name"] == "mini-square"
    assert len(body["pencil"]) == 4                       # four square corners
    sm = body["smoothness"]
    for key in ("sobolev_rate", "nterm_slope", "besov_gamma_est", "tau",
                "l2_rate", "gap"):
        assert key in sm
    # smooth control problem: second order, no adaptivity gap
    assert sm["sobolev_rate"] == pytest.approx(2.0, abs=0.1)
    assert abs(sm["gap"]) < 0.15
    assert report.error is None
    errors_csv = (tmp_path / "mini-square" / "errors.csv").read_text().splitlines()
    assert errors_csv[0] == "h,n,n_steps,uniform_error,l2_error,graded_error"
    assert len(errors_csv) == 1 + 4


def test_run_experiment_pencil_only(tmp_path):
    report = cp.run_experiment(cp.preset("slit-pencil"), str(tmp_path))
    assert report.smoothness is None
    corners = report.pencil
    slit = [c for c in corners if c["singular"]][0]
    assert slit["angle"] == pytest.approx(2 * math.pi)
    assert slit["weights_nonlinear_m1"]["empty"] is True
    assert slit["heat_weight_bound"] == -0.5
    assert slit["max_rel_error"] < 1e-6
    body = json.loads((tmp_path / "slit-pencil" / "report.json").read_text())
    assert body["results"] == {}


def test_run_experiment_partial_report_on_failure(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise NumericError("synthetic rates failure")

    monkeypatch.setattr(cornerpde.experiment, "estimate_rates", boom)
    cfg = cp.ExperimentConfig.from_dict(mini_square_config())
    with pytest.raises(NumericError, match="synthetic rates failure"):
        cp.run_experiment(cfg, str(tmp_path))
    body = json.loads((tmp_path / "mini-square" / "report.json").read_text())
    assert body["error"]["stage"] == "rates"
    assert body["error"]["type"] == "NumericError"
    assert "synthetic" in body["error"]["message"]
    # the solution files written before the failure are still manifested
    manifest = json.loads((tmp_path / "mini-square" / "manifest.json").read_text())
    assert any(name.startswith("solution_uniform") for name in manifest["files"])


def test_run_experiment_semilinear_summary(tmp_path):
    cfg_d = {
        "name": "mini-semi",
        "domain": {"kind": "lshape"},
        "mesh": {"type": "uniform", "h_sequence": [1 / 4, 1 / 8],
                 "reference_refinements": 0},
        "problem": {"f": "one", "T": 0.1,
                    "n_steps": {"rule": "fixed", "value": 8}},
        "semilinear": {"eps": {"rule": "half-max"}, "M": 2, "r0": 2.0,
                       "tol": 1e-9, "max_iter": 50, "n_probes": 4},
        "seed": 0,
    }
    cfg = cp.ExperimentConfig.from_dict(cfg_d)
    report = cp.run_experiment(cfg, str(tmp_path))
    rows = report.results["semilinear"]
    assert [r["n"] for r in rows] == [4, 8]
    for r in rows:
        assert r["converged"] and r["smallness_ok"]
        assert r["eps"] == pytest.approx(0.5 * r["max_eps"])
        assert r["eta_tilde"] == pytest.approx(math.sqrt(3.0), abs=1e-10)
    body = json.loads((tmp_path / "mini-semi" / "report.json").read_text())
    assert body["iterations"]["converged"] is True
    assert "iterations_uniform_n0008.csv" in report.manifest
