import json
import os
import subprocess
import sys

import pytest

from ergocell.cli import list_presets, main, resolve_config
from ergocell.config import (ConfigError, parse_config, serialize_config,
                             validate)
from ergocell.runners import execute

MINIMAL = {
    "experiment": "beta_estimate", "experiment_id": "mini", "master_seed": 3,
    "operator": {"kind": "linear_trace", "dim": 2},
    "field": {"lattice_dim": 1,
              "law": {"kind": "bernoulli", "p": 0.5, "a": 0.0, "b": 1.0}},
    "geometry": {"R_list": [4.0, 8.0, 16.0], "L_rule": 4.0, "h_rule": 8.0},
    "statistics": {}, "solver": {},
}


def test_config_round_trip():
    text = json.dumps(MINIMAL)
    cfg = parse_config(text)
    assert parse_config(serialize_config(cfg)).raw == cfg.raw
    twice = serialize_config(parse_config(serialize_config(cfg)))
    assert twice == serialize_config(cfg)


def test_validate_ordering_error():
    bad = dict(MINIMAL, operator={"kind": "pucci_plus", "lam": 2.0, "Lam": 1.0,
                                  "dim": 2})
    errors, _ = validate(parse_config(json.dumps(bad)))
    assert any("lam" in e for e in errors)


def test_validate_nonconvex_warning_cites_threshold():
    cfg = dict(MINIMAL)
    cfg["experiment"] = "cell_concentration"
    cfg["operator"] = {"kind": "isaacs", "lam": 0.7, "Lam": 1.0,
                       "matrix_table": [[[[0.8, 0.0], [0.0, 0.7]],
                                         [[0.7, 0.0], [0.0, 0.8]]],
                                        [[[0.7, 0.0], [0.0, 0.9]],
                                         [[0.9, 0.0], [0.0, 0.7]]]]}
    cfg["statistics"] = {"samples": 60}
    errors, warnings = validate(parse_config(json.dumps(cfg)))
    assert not errors
    assert any("0.750" in w for w in warnings)


def test_validate_well_formed_presets():
    for name in list_presets():
        cfg = resolve_config(name)
        errors, _ = validate(cfg)
        assert errors == [], (name, errors)


def test_presets_cover_acceptance_criteria():
    names = set(list_presets())
    for k in range(1, 13):
        assert f"AC{k}" in names


def test_flagged_config_needs_opt_in():
    cfg = dict(MINIMAL)
    cfg["experiment"] = "cell_concentration"
    cfg["geometry"] = {"cell_kind": "neumann", "R_list": [4.0, 8.0],
                       "L_rule": 4.0, "h_rule": 4.0}
    cfg["statistics"] = {"samples": 50}
    parsed = parse_config(json.dumps(cfg))
    _, warnings = validate(parsed)
    assert warnings  # beta_N = 0 degeneracy
    with pytest.raises(ConfigError):
        execute(parsed, threads=1)


def run_cli(args):
    return subprocess.run([sys.executable, "-m", "ergocell.cli", *args],
                          capture_output=True, text=True)


def test_cli_validate_and_exit_codes(tmp_path):
    cfg_path = tmp_path / "mini.json"
    cfg_path.write_text(json.dumps(MINIMAL))
    assert run_cli(["validate", str(cfg_path)]).returncode == 0
    bad = dict(MINIMAL, operator={"kind": "pucci_plus", "lam": 2.0, "Lam": 1.0,
                                  "dim": 2})
    bad_path = tmp_path / "bad.json"
    bad_path.write_text(json.dumps(bad))
    assert run_cli(["validate", str(bad_path)]).returncode == 2
    assert run_cli(["validate", str(tmp_path / "missing.json")]).returncode == 2


def test_cli_run_writes_bundle_and_seed_override(tmp_path):
    cfg_path = tmp_path / "mini.json"
    cfg_path.write_text(json.dumps(MINIMAL))
    out = tmp_path / "out"
    r = run_cli(["run", str(cfg_path), "--out", str(out), "--seed", "99"])
    assert r.returncode == 0, r.stderr
    for name in ("manifest.json", "concentration.csv", "rates.csv",
                 "domain_sweep.csv", "probe.csv"):
        assert (out / name).exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["master_seed"] == 99
    # manifest echoes a config that parses back identically
    assert parse_config(json.dumps(man["config"])).raw["geometry"] == MINIMAL["geometry"]


def test_cli_refuses_nonempty_output(tmp_path):
    cfg_path = tmp_path / "mini.json"
    cfg_path.write_text(json.dumps(MINIMAL))
    out = tmp_path / "busy"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    r = run_cli(["run", str(cfg_path), "--out", str(out)])
    assert r.returncode == 1
    assert (out / "keep.txt").read_text() == "x"
    assert not (out / "manifest.json").exists()


def test_csv_bitwise_stable_across_threads(tmp_path):
    cfg = dict(MINIMAL)
    cfg["experiment"] = "cell_concentration"
    cfg["experiment_id"] = "thr"
    cfg["geometry"] = {"R_list": [4.0, 8.0], "L_rule": 4.0, "h_rule": 8.0}
    cfg["statistics"] = {"samples": 60}
    parsed = parse_config(json.dumps(cfg))
    b1 = execute(parsed, threads=1)
    b8 = execute(parsed, threads=8)
    f1, f8 = b1.files(), b8.files()
    for name in ("concentration.csv", "rates.csv", "domain_sweep.csv", "probe.csv"):
        assert f1[name] == f8[name]


def test_list_presets_cli():
    r = run_cli(["list-presets"])
    assert r.returncode == 0
    assert "AC1" in r.stdout.split()
