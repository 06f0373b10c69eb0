import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from dynkinlab.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, build_problem, main
from dynkinlab.config import validate_config
from dynkinlab.instances import d1
from dynkinlab.plotting import PlotError, emit_plot, load_solve_csv
from dynkinlab.rbsde import solve_rbsde

D1 = {"grid": {"horizon": 1.0, "steps": 3}, "driver": {"preset": "linear", "params": [-1.0, 0.5, 0.0]},
      "barriers": {"family": "separated", "params": [2.0]}, "terminal": {"preset": "bt"}}

SVG = "{http://www.w3.org/2000/svg}"


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_config_builds_desk_instance():
    spec = build_problem(validate_config(D1))
    ref = d1()
    np.testing.assert_array_equal(spec.barriers.L, ref.barriers.L)
    np.testing.assert_array_equal(spec.xi, ref.xi)
    assert solve_rbsde(spec).root == solve_rbsde(ref).root


def test_solve_and_penalty_outputs(tmp_path):
    doc = dict(D1, experiments=[{"kind": "solve"}, {"kind": "penalty_study"}])
    out = tmp_path / "out"
    assert main(["run", "--config", write(tmp_path, doc), "--out-dir", str(out)]) == EXIT_OK
    rows = read_csv(out / "solve.csv")
    assert len(rows) == 15
    assert list(rows[0]) == ["node_id", "depth", "B", "L", "U", "Y", "Z", "dRp", "dRm"]
    assert float(rows[0]["Y"]) == solve_rbsde(d1()).root
    pen = read_csv(out / "penalty.csv")
    assert list(pen[0]) == ["n", "sup_error", "lower_monotone", "upper_monotone", "err_monotone", "runtime_ms"]
    assert [float(r["n"]) for r in pen] == [1, 4, 16, 64, 256, 1024, 4096]
    assert all(r["runtime_ms"] == "" for r in pen)
    assert (out / "summary.txt").read_text().count("[PASS]") == 2


def test_outputs_are_byte_identical(tmp_path):
    doc = dict(D1, experiments=[{"kind": "solve", "options": {"plot_path": "uud"}}, {"kind": "game_verify"},
                                {"kind": "maximality"}])
    cfg = write(tmp_path, doc)
    for name in ("a", "b"):
        assert main(["run", "--config", cfg, "--out-dir", str(tmp_path / name)]) == EXIT_OK
    for f in ("solve.csv", "game.csv", "maximality.csv", "summary.txt", "path_uud.svg"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_game_and_mokobodzki_outputs(tmp_path):
    out = tmp_path / "g"
    doc = dict(D1, barriers={"family": "constant_band", "params": [-0.3, 0.3]},
               driver={"preset": "linear", "params": [-1.0, 0.5, 0.4]}, experiments=[{"kind": "game_verify"}])
    assert main(["run", "--config", write(tmp_path, doc), "--out-dir", str(out)]) == EXIT_OK
    rows = read_csv(out / "game.csv")
    assert list(rows[0]) == ["theta_id", "value_rbsde", "value_upper", "value_lower", "saddle_pass",
                             "maximality_pass", "witness_path"]
    assert rows[0]["saddle_pass"] == "true"

    out = tmp_path / "m"
    doc = {"grid": {"horizon": 1.0, "steps": 8}, "driver": {"preset": "linear", "params": [-1.0, 0.5, 0.0]},
           "barriers": {"family": "closing_gap", "params": [0.5]}, "experiments": [{"kind": "mokobodzki_report"}]}
    assert main(["run", "--config", write(tmp_path, doc), "--out-dir", str(out)]) == EXIT_OK
    rows = read_csv(out / "mokobodzki.csv")
    assert len(rows) == 256
    assert {r["gamma_depth"] for r in rows} == {"4"} and {r["meet_kind"] for r in rows} == {"AtMeet"}


def test_property_suite_summary(tmp_path):
    out = tmp_path / "p"
    doc = dict(D1, seed=42, experiments=[{"kind": "property_suite", "options": {
        "suites": ["zero_driver", "comparison", "skorokhod", "value_identity"], "instances": 5}}])
    assert main(["run", "--config", write(tmp_path, doc), "--out-dir", str(out)]) == EXIT_OK
    text = (out / "summary.txt").read_text()
    for name in ("zero_driver", "comparison", "skorokhod", "value_identity"):
        assert f"{name}: pass" in text


def test_exit_codes(tmp_path, capsys):
    bad = dict(D1, driver={"preset": "foo"})
    assert main(["validate", "--config", write(tmp_path, bad)]) == EXIT_CONFIG
    assert "foo" in capsys.readouterr().err
    assert main(["validate", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["validate", "--config", write(tmp_path, D1)]) == EXIT_OK
    # a driver whose implicit step is ill-posed at this dt is a runtime error
    steep = dict(D1, driver={"preset": "linear", "params": [5.0, 0.0, 0.0]})
    assert main(["run", "--config", write(tmp_path, steep), "--out-dir", str(tmp_path / "s")]) == EXIT_RUNTIME


def test_failed_check_exit(tmp_path, monkeypatch):
    import dynkinlab.cli as cli

    monkeypatch.setattr(cli, "skorokhod_violations", lambda *a, **k: 1)
    assert main(["run", "--config", write(tmp_path, D1), "--out-dir", str(tmp_path / "f")]) == EXIT_CHECK
    assert "[FAIL] solve" in (tmp_path / "f" / "summary.txt").read_text()


def test_seed_override_is_recorded(tmp_path):
    out = tmp_path / "o"
    main(["run", "--config", write(tmp_path, D1), "--out-dir", str(out), "--seed", "7"])
    assert json.loads((out / "config.json").read_text())["seed"] == 7


# -- plots --------------------------------------------------------------------

def _svg_ids(path):
    root = ET.parse(path).getroot()
    return {el.get("id"): el for el in root.iter() if el.get("id")}


def _polyline_points(group):
    path = next(group.iter(f"{SVG}path"))
    return path.get("d").count("L") + 1


def test_plot_desk_path(tmp_path):
    cfg = write(tmp_path, dict(D1, experiments=[{"kind": "solve"}]))
    out = tmp_path / "d"
    assert main(["run", "--config", cfg, "--out-dir", str(out)]) == EXIT_OK
    assert main(["plot", "--config", cfg, "--out-dir", str(out), "--path", "uud"]) == EXIT_OK
    ids = _svg_ids(out / "path_uud.svg")
    assert {"Y", "L", "U", "star", "hat"} <= set(ids)
    for name in ("Y", "L", "U"):
        assert _polyline_points(ids[name]) == 4


def test_plot_single_step(tmp_path):
    doc = dict(D1, grid={"horizon": 1.0, "steps": 1}, experiments=[{"kind": "solve", "options": {"plot_path": "d"}}])
    out = tmp_path / "one"
    assert main(["run", "--config", write(tmp_path, doc), "--out-dir", str(out)]) == EXIT_OK
    ids = _svg_ids(out / "path_d.svg")
    for name in ("Y", "L", "U"):
        assert _polyline_points(ids[name]) == 2


def test_plot_recombining(tmp_path):
    doc = dict(D1, tree={"kind": "recombining"}, experiments=[{"kind": "solve", "options": {"plot_path": "dud"}}])
    out = tmp_path / "rec"
    assert main(["run", "--config", write(tmp_path, doc), "--out-dir", str(out)]) == EXIT_OK
    assert (out / "path_dud.svg").is_file()


def test_plot_errors(tmp_path, capsys):
    cfg = write(tmp_path, dict(D1, experiments=[{"kind": "solve"}]))
    out = tmp_path / "e"
    assert main(["plot", "--config", cfg, "--out-dir", str(out), "--path", "uud"]) == EXIT_RUNTIME
    assert "missing" in capsys.readouterr().err
    main(["run", "--config", cfg, "--out-dir", str(out)])
    table = load_solve_csv(out / "solve.csv")
    with pytest.raises(PlotError, match="uux"):
        emit_plot(table, "uux", tmp_path / "x.svg")
