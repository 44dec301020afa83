import json
import math
import re

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from tnc_policy import analysis, cli
from tnc_policy.config import PARAM_FIELDS, POLICY_FIELDS, Grid, parse_config, spec_from_dict
from tnc_policy.errors import ConfigError, DomainError
from tnc_policy.tables import COLUMNS, emit_table, read_table, to_csv


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out)])
    return code, out


def bundled_doc():
    from importlib import resources

    return json.loads(resources.files("tnc_policy").joinpath("data", "sf_default.json").read_text())


# --- config -------------------------------------------------------------------------


def test_bundled_default_params():
    p = parse_config("sf_default").params
    assert (p.lambda0, p.n0, p.m_const, p.trip_len, p.kappa) == (1049, 10000, 41.18, 2.6, 0.0003)
    assert (p.alpha, p.eps, p.c_out, p.sigma, p.w_res) == (2.33, 0.33, 31.2, 0.089, 31.04)
    assert p.beta == pytest.approx(70 / 60)
    # speed law anchored at the observed 14 mph with 3000 vehicles
    assert p.v_free == 14.9


def test_bundled_calibrated_config_has_no_params():
    spec = parse_config("sf_calibrated")
    assert spec.params is None
    assert spec.resolve_params().eps == pytest.approx(0.3278, abs=1e-4)


def test_empty_file_lists_required_keys(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("")
    with pytest.raises(ConfigError) as err:
        parse_config(path)
    for fld in PARAM_FIELDS:
        assert fld.keys()[0] in str(err.value)


def test_wage_floor_per_minute_rejected():
    doc = bundled_doc()
    doc["policy"] = {"w_min_usd_per_min": 0.44}
    with pytest.raises(ConfigError, match="w_min_usd_per_min: unsupported unit; expected w_min_usd_per_hr"):
        spec_from_dict(doc)


@settings(max_examples=60, deadline=None)
@given(
    fld=st.sampled_from([f for f in PARAM_FIELDS + POLICY_FIELDS if f.kind == "number"]),
    unit=st.sampled_from(["per_min", "per_hr", "usd", "usd_per_min", "usd_per_hr", "mph", "kmh", "per_sec"]),
)
def test_unit_suffix_fuzz(fld, unit):
    doc = bundled_doc()
    section = "params" if fld in PARAM_FIELDS else "policy"
    key = f"{fld.name}_{unit}"
    assume(key not in fld.keys())
    for k in fld.keys():
        doc[section].pop(k, None)
    doc[section][key] = 1.0
    with pytest.raises(ConfigError) as err:
        spec_from_dict(doc)
    assert f"{key}: unsupported unit; expected {fld.keys()[0]}" in str(err.value)


def test_time_values_accepted_per_hour():
    doc = bundled_doc()
    del doc["params"]["alpha_usd_per_min"]
    doc["params"]["alpha_usd_per_hr"] = 139.8
    assert spec_from_dict(doc).params.alpha == pytest.approx(2.33)


def test_unknown_key_and_section_rejected():
    doc = bundled_doc()
    doc["params"]["speed"] = 3
    with pytest.raises(ConfigError, match="unknown key 'speed'"):
        spec_from_dict(doc)
    doc = bundled_doc()
    doc["plots"] = {}
    with pytest.raises(ConfigError, match="unknown section"):
        spec_from_dict(doc)


def test_invalid_values_become_config_errors():
    doc = bundled_doc()
    doc["params"]["eps_per_usd"] = -1
    with pytest.raises(ConfigError):
        spec_from_dict(doc)
    doc = bundled_doc()
    doc["policy"]["levy_side"] = "nobody"
    with pytest.raises(ConfigError):
        spec_from_dict(doc)


def test_grid_parsing():
    assert Grid.parse("0:3:100").levels()[-1] == 3.0
    assert len(Grid.parse("0:3:100").levels()) == 100
    with pytest.raises(ConfigError):
        Grid.parse("0:3")
    with pytest.raises(ConfigError):
        Grid.parse("3:0:4")


# --- tables ----------------------------------------------------------------------------


def test_empty_table_is_header_only(tmp_path):
    path = emit_table([], tmp_path / "t", "csv")
    assert path.read_text() == ",".join(COLUMNS) + "\n"


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(*[finite] * (len(COLUMNS) - 1), st.sampled_from(["unconstrained", "x"])), max_size=5))
def test_table_round_trip(tmp_path_factory, rows):
    dicts = [dict(zip(COLUMNS, r)) for r in rows]
    d = tmp_path_factory.mktemp("rt")
    for fmt in ("csv", "json"):
        back = read_table(emit_table(dicts, d / "t", fmt))
        assert back == dicts


def test_nan_survives_round_trip(tmp_path):
    row = dict(zip(COLUMNS, [math.nan] * (len(COLUMNS) - 1) + ["failed"]))
    for fmt in ("csv", "json"):
        back = read_table(emit_table([row], tmp_path / "t", fmt))[0]
        assert math.isnan(back["profit_hr"]) and back["regime"] == "failed"


def test_floats_use_seventeen_digits():
    text = to_csv([dict(zip(COLUMNS, [0.1] * 12 + ["r"]))])
    assert "0.10000000000000001" in text


# --- commands ------------------------------------------------------------------------


def test_solve_reproduces_plateau(tmp_path):
    code, out = run(tmp_path, "solve", "--config", "sf_calibrated", "--w-min", "26.35")
    assert code == 0
    rows = read_table(out / "solve.csv")
    assert len(rows) == 1
    r = rows[0]
    assert r["lambda_per_min"] == pytest.approx(208.456, abs=0.1)
    assert r["n_drivers"] == pytest.approx(3968.15, abs=1)
    assert r["p_f"] == pytest.approx(11.628, abs=0.01)
    assert r["profit_hr"] == pytest.approx(40877.83, rel=1e-3)
    assert r["regime"] == "wage_floor_full_hire"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["overrides"] == {"w_min_usd_per_hr": 26.35, "out": str(out)}
    assert manifest["version"] and manifest["wall_time_s"] >= 0
    assert {o["file"] for o in manifest["outputs"]} == {"solve.csv", "solve_info.json"}


def test_solve_with_tax_override(tmp_path):
    code, out = run(tmp_path, "solve", "--config", "sf_calibrated", "--scheme", "time", "--tax", "10", "--format", "json")
    assert code == 0
    r = read_table(out / "solve.json")[0]
    assert r["tax_level"] == 10.0
    assert r["tax_hr"] == pytest.approx(32451, abs=300)


def test_sweep_row_count_and_baseline(tmp_path):
    code, out = run(tmp_path, "sweep", "--config", "sf_calibrated", "--scheme", "trip")
    assert code == 0
    rows = read_table(out / "sweep_trip.csv")
    assert len(rows) == 100
    assert rows[0]["tax_level"] == 0.0
    assert rows[0]["profit_hr"] == pytest.approx(40877.83, rel=1e-3)


def test_reruns_are_byte_identical(tmp_path):
    for argv in (["sweep", "--grid", "0:10:6", "--scheme", "time"], ["compare", "--tax", "1.0"], ["calibrate"]):
        _, a = run(tmp_path, *argv, name="a")
        _, b = run(tmp_path, *argv, name="b")
        files = sorted(p.name for p in a.iterdir() if p.name != "manifest.json")
        assert files
        for name in files:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_calibrate_command(tmp_path):
    code, out = run(tmp_path, "calibrate")
    assert code == 0
    doc = json.loads((out / "calibration.json").read_text())
    assert doc["fit"]["eps_per_usd"] == pytest.approx(0.33, abs=0.01)
    assert doc["flagged"] == []
    # the emitted params block is itself a valid config
    assert spec_from_dict({"params": doc["params"]}).params.eps == doc["fit"]["eps_per_usd"]


def test_compare_command(tmp_path):
    code, out = run(tmp_path, "compare", "--config", "sf_calibrated", "--grid", "0.5:2.0:2")
    assert code == 0
    rows = read_table(out / "compare.csv")
    assert len(rows) == 2
    assert all(r["lam_higher"] and r["profit_higher"] and r["n_equal"] for r in rows)


def test_thresholds_command(tmp_path):
    code, out = run(tmp_path, "thresholds", "--config", "sf_calibrated", "--scheme", "time")
    assert code == 0
    doc = json.loads((out / "thresholds.json").read_text())
    assert doc["p_bar_time_usd_per_hr"] == pytest.approx(6.2, abs=0.2)
    assert doc["w1_usd_per_hr"] == doc["w3_usd_per_hr"]


def test_sensitivity_command(tmp_path):
    code, out = run(tmp_path, "sensitivity", "--grid", "0:10:3")
    assert code == 0
    flags = json.loads((out / "sensitivity_flags.json").read_text())["flags"]
    assert flags["plateau_fleet_invariant_to_lambda0"]
    assert (out / "sensitivity_alpha_plus5pct.csv").exists()


# --- errors ------------------------------------------------------------------------------


def test_exit_codes_distinct_and_documented():
    codes = [v for k, v in vars(cli).items() if k.startswith("EXIT_") and isinstance(v, int)]
    assert len(codes) == len(set(codes))
    helptext = cli.build_parser().format_help()
    for code in codes:
        assert re.search(rf"^\s+{code}\s+\S", helptext, re.M), code


def test_config_error_exit(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"params": {"w_min_usd_per_min": 1}}')
    code, out = run(tmp_path, "solve", "--config", str(bad))
    assert code == cli.EXIT_CONFIG
    assert json.loads((out / "error.json").read_text())["exit_code"] == cli.EXIT_CONFIG


def test_calibrate_without_targets_is_config_error(tmp_path):
    doc = bundled_doc()
    del doc["calibration"]
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    code, out = run(tmp_path, "calibrate", "--config", str(path))
    assert code == cli.EXIT_CONFIG
    assert (out / "error.json").exists() and (out / "manifest.json").exists()


def test_threshold_not_found_exit(tmp_path):
    code, out = run(tmp_path, "thresholds", "--w-min", "21.55", "--scheme", "trip", "--grid", "0:3:4")
    assert code == cli.EXIT_THRESHOLD
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "ThresholdNotFound"
    assert json.loads((out / "thresholds.json").read_text())["p_bar_trip_usd_per_trip"] is None


def test_solver_failure_exit(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise DomainError("injected")

    monkeypatch.setattr(cli, "solve", boom)
    code, out = run(tmp_path, "solve")
    assert code == cli.EXIT_SOLVER
    assert json.loads((out / "error.json").read_text())["message"] == "injected"


def test_partial_sweep_exit(tmp_path, monkeypatch):
    real = analysis.solve_scheme

    def flaky(params, w_min, scheme, level, *a):
        if level > 1.5:
            raise DomainError("injected")
        return real(params, w_min, scheme, level, *a)

    monkeypatch.setattr(analysis, "solve_scheme", flaky)
    code, out = run(tmp_path, "sweep", "--grid", "0:2:3")
    assert code == cli.EXIT_PARTIAL
    rows = read_table(out / "sweep_trip.csv")
    assert rows[-1]["regime"] == "failed"
    assert json.loads((out / "error.json").read_text())["failures"]["trip"][0]["tax_level"] == 2.0


def test_unwritable_output_exit(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["solve", "--out", str(blocker / "sub")]) == cli.EXIT_IO


def test_error_file_cleared_on_success(tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / "error.json").write_text("{}")
    assert cli.main(["solve", "--out", str(out)]) == 0
    assert not (out / "error.json").exists()
