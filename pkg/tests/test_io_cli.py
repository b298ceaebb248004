import io
import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from prodsphere.cli import (EXIT_CONFIG, EXIT_INVALID, EXIT_OK, EXIT_SOLVER, build_problem,
                            parse_k_spec, run_cli)
from prodsphere.discretization import DiscreteField, PolarGrid2D, RadialGrid
from prodsphere.io import (ConfigError, RunConfig, dumps, load_config, parse_config,
                           read_field_csv, read_K_table, serialize_config, write_field_csv,
                           write_K_table)

BASE = {"dims": {"m": 2, "n": 1}, "cap": {"theta_max": np.pi / 3},
        "K": {"kind": "scaled_subsolution", "params": {"c": 0.5}},
        "boundary": {"kind": "abf_auto", "params": {}},
        "grid": {"backend": "radial", "nr": 65}}


def cli(argv):
    buf = io.StringIO()
    code = run_cli(argv, buf)
    return code, buf.getvalue()


def write_cfg(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return p


@given(m=st.integers(2, 4), tm=st.floats(0.1, 1.5), c=st.floats(0.01, 1.0),
       dt0=st.floats(0.01, 1.0), nr=st.integers(5, 400))
def test_config_roundtrip(m, tm, c, dt0, nr):
    d = {**BASE, "dims": {"m": m, "n": 1}, "cap": {"theta_max": tm},
         "K": {"kind": "scaled_subsolution", "params": {"c": c}},
         "grid": {"backend": "radial", "nr": nr}, "solver": {"dt0": dt0, "dt_min": 1e-4}}
    cfg = RunConfig.from_dict(d)
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    assert serialize_config(again) == serialize_config(cfg)


@pytest.mark.parametrize("patch", [
    {"dims": {"m": 2}},
    {"cap": {"theta_max": 2.0}},
    {"K": {"kind": "nope", "params": {}}},
    {"K": {"kind": "constant", "params": {"value": 1.0, "extra": 2}}},
    {"K": {"kind": "constant", "params": {"value": float("nan")}}},
    {"boundary": {"kind": "abf_params", "params": {"E": 0.2}}},
    {"grid": {"backend": "hex"}},
    {"grid": {"backend": "radial", "nr": 6.5}},
    {"solver": {"speed": 1}},
    {"outputs": {"pdf": "x"}},
    {"extra": {}},
])
def test_config_rejections(patch):
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**BASE, **patch})
    with pytest.raises(ConfigError):
        parse_config("{not json")


def test_defaults_filled():
    cfg = RunConfig.from_dict({k: BASE[k] for k in ("dims", "cap", "K")})
    assert cfg.grid == {"backend": "radial", "nr": 129}
    assert cfg.boundary["kind"] == "abf_auto"


def test_dumps_deterministic_and_nan():
    a = dumps({"b": np.float64(1.5), "a": [np.int64(2), np.nan], "c": np.bool_(True)})
    assert a == dumps({"c": True, "a": [2, float("nan")], "b": 1.5})
    assert json.loads(a) == {"a": [2, None], "b": 1.5, "c": True}


@pytest.mark.parametrize("kind", ["radial", "polar"])
def test_field_csv_bitwise(tmp_path, cap3, dims21, kind, rng):
    g = RadialGrid(cap3, 17) if kind == "radial" else PolarGrid2D(cap3, 9, 16)
    u = DiscreteField(g, -2 + 0.5 * g.theta**2 + 1e-3 * rng.random(g.n_nodes) * np.pi)
    write_field_csv(tmp_path / "u.csv", u, dims21)
    back = read_field_csv(tmp_path / "u.csv", g)
    assert np.array_equal(back.values, u.values)
    with pytest.raises(ValueError):
        read_field_csv(tmp_path / "u.csv", RadialGrid(cap3, 33) if kind == "radial"
                       else PolarGrid2D(cap3, 9, 8))


def test_K_table_roundtrip(tmp_path):
    th = np.linspace(0, 1, 5)
    write_K_table(tmp_path / "k.csv", th, 1 + th)
    T = read_K_table(tmp_path / "k.csv")
    assert T(0.5) == 1.5
    (tmp_path / "bad.csv").write_text("x,y\n1,2\n")
    with pytest.raises(ValueError):
        read_K_table(tmp_path / "bad.csv")


def test_parse_k_spec():
    assert parse_k_spec("constant:0.5")["params"] == {"value": 0.5}
    assert parse_k_spec("radial_bump:0.4,0.1")["params"] == {"c1": 0.4, "c2": 0.1}
    for bad in ("constant:x", "radial_bump:1", "table:", "cubic:1"):
        with pytest.raises(ConfigError):
            parse_k_spec(bad)


def test_forward_clifford():
    code, text = cli(["forward", "--m", "2", "--n", "1", "--u", str(np.log(2))])
    d = json.loads(text)
    assert code == EXIT_OK
    assert d["K"] == pytest.approx(0.5)
    assert sorted(d["principal_curvatures"]) == pytest.approx([-0.5, -0.5, 2.0])


def test_abf_command():
    code, text = cli(["abf", "--m", "2", "--n", "1", "--theta-max", str(np.pi / 3),
                      "--k", "constant:0.5"])
    assert code == EXIT_OK and json.loads(text)["certificate"]["valid"]
    # on a 17-node grid the one-sided boundary stencil is never convex, so no shift works
    code, text = cli(["abf", "--m", "2", "--n", "1", "--theta-max", str(np.pi / 3),
                      "--k", "constant:0.5", "--nr", "17"])
    assert code == EXIT_INVALID and json.loads(text)["status"] == "search_exhausted"


def test_solve_outputs_and_determinism(tmp_path):
    cfg = write_cfg(tmp_path, {**BASE, "outputs": {"field_csv": str(tmp_path / "u.csv"),
                                                    "report_json": str(tmp_path / "r.json")}})
    code, text = cli(["solve", "--config", str(cfg)])
    assert code == EXIT_OK
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["status"] == "converged" and all(rep["diagnostics"]["flags"].values())
    assert rep["comparison_vs_psi"]["confirmed"]
    assert rep["config"] == RunConfig.from_dict(json.loads(cfg.read_text())).to_dict()
    first = (tmp_path / "u.csv").read_bytes()
    code, text2 = cli(["solve", "--config", str(cfg)])
    assert text2 == text and (tmp_path / "u.csv").read_bytes() == first


def test_psi_run_has_zero_gap(tmp_path):
    cfg = {**BASE, "K": {"kind": "scaled_subsolution", "params": {"c": 1.0}}}
    code, text = cli(["solve", "--config", str(write_cfg(tmp_path, cfg))])
    assert code == EXIT_OK and json.loads(text)["diagnostics"]["u_minus_psi_min"] == 0.0


def test_manufacture_then_solve(tmp_path):
    code, text = cli(["manufacture", "--m", "2", "--n", "1", "--theta-max", str(np.pi / 3),
                      "--nr", "65", "--out-k", str(tmp_path / "k.csv"),
                      "--config-out", str(tmp_path / "cfg.json"),
                      "--u-star-csv", str(tmp_path / "ustar.csv")])
    assert code == EXIT_OK
    code, _ = cli(["solve", "--config", str(tmp_path / "cfg.json"),
                   "--field-csv", str(tmp_path / "u.csv")])
    assert code == EXIT_OK
    g = RadialGrid(build_problem(load_config(tmp_path / "cfg.json"))[0].grid.cap, 65)
    err = np.abs(read_field_csv(tmp_path / "u.csv", g).values
                 - read_field_csv(tmp_path / "ustar.csv", g).values).max()
    assert err < 1e-3


def test_solve_status_codes(tmp_path):
    # boundary value above r0: the start field is not admissible
    bad = {**BASE, "K": {"kind": "constant", "params": {"value": 0.5}},
           "boundary": {"kind": "constant", "params": {"value": 0.0}}}
    code, text = cli(["solve", "--config", str(write_cfg(tmp_path, bad))])
    assert code == EXIT_INVALID and json.loads(text)["status"] == "certificate_invalid"
    stall = {**BASE, "solver": {"dt0": 1.0, "dt_min": 0.9, "max_newton": 0}}
    code, text = cli(["solve", "--config", str(write_cfg(tmp_path, stall, "s.json"))])
    d = json.loads(text)
    assert code == EXIT_SOLVER and d["status"] == "path_stalled" and d["last_t"] == 0.0
    huge = {**BASE, "K": {"kind": "constant", "params": {"value": 0.5}},
            "grid": {"backend": "radial", "nr": 17}}
    code, text = cli(["solve", "--config", str(write_cfg(tmp_path, huge, "h.json"))])
    assert code == EXIT_INVALID and json.loads(text)["status"] == "abf_search_exhausted"


def test_config_errors(tmp_path):
    assert cli(["solve", "--config", str(tmp_path / "missing.json")])[0] == EXIT_CONFIG
    assert cli(["frobnicate"])[0] == EXIT_CONFIG
    assert cli(["check", "comparison"])[0] == EXIT_CONFIG
    tbl = {**BASE, "K": {"kind": "table", "params": {"path": "nowhere.csv"}}}
    assert cli(["solve", "--config", str(write_cfg(tmp_path, tbl))])[0] == EXIT_CONFIG


def test_swapped_dims_rejected():
    code, _ = cli(["abf", "--m", "1", "--n", "2", "--theta-max", "1.0", "--k", "constant:0.5"])
    assert code == EXIT_INVALID


@pytest.mark.parametrize("what", ["obstruction", "jacobian", "oracle"])
def test_check_commands(what):
    code, text = cli(["check", what, "--samples", "2", "--seed", "3"])
    assert code == EXIT_OK and json.loads(text)["passed"]
    if what == "oracle":
        assert set(json.loads(text)["swap_signs_observed"]) <= {-1.0, 1.0}


def test_check_comparison_and_boundary(tmp_path):
    cfg = str(write_cfg(tmp_path, BASE))
    assert cli(["check", "comparison", "--config", cfg])[0] == EXIT_OK
    code, text = cli(["check", "boundary-identity", "--config", cfg])
    assert code == EXIT_OK and json.loads(text)["passed"]


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "prodsphere", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "solve" in r.stdout
