import io
import json

import pytest

from ehresmann_lab.cli import dump_json, jsonable, main


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def test_lift_blowup_exits_zero():
    code, out, _ = run(["lift", "--scenario", "example1", "--connection", "average", "--y0", "1", "--t1", "2"])
    assert code == 0
    last = out.strip().splitlines()[-1]
    assert "BlowUp(" in last
    t_star = float(last.split("BlowUp(")[1].rstrip(")"))
    assert t_star == pytest.approx(1.0, rel=1e-3)


def test_construct_reports_eight_tubes():
    code, out, _ = run(["construct", "--scenario", "tube-demo", "--rounds", "4"])
    doc = json.loads(out)
    assert code == 0
    assert doc["schema_version"] == "1"
    assert len(doc["tubes"]) == 8
    assert doc["max_agreement_residual"] <= 1e-9


def test_check_disconnecting_output():
    code, out, _ = run(["check-lemma", "--scenario", "example1", "--connection", "average", "--sections", "k-pi"])
    doc = json.loads(out)
    assert code == 0 and doc["verdict"] is False


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenario": "example1", "connection": "H1", "b1": [2.0], "fibers": [1.0]}))
    _, out1, _ = run(["transport", "--config", str(cfg)])
    _, out2, _ = run(["transport", "--config", str(cfg), "--connection", "H2"])
    assert json.loads(out1)["connection"] == "H1"
    assert json.loads(out2)["connection"] == "H2"


def test_params_from_config_and_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenario": "example3", "params": {"k_max": 8}}))
    _, out, _ = run(["length", "--config", str(cfg)])
    assert json.loads(out)["params"]["k_max"] == 8
    _, out, _ = run(["length", "--config", str(cfg), "--param", "k_max=10"])
    assert json.loads(out)["params"]["k_max"] == 10


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenario": "example1", "horizon": 3}))
    code, _, err = run(["lift", "--config", str(cfg)])
    assert code == 2 and "horizon" in err


def test_config_parse_error_has_position(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{\n  "scenario": "example1",\n  oops\n}')
    code, _, err = run(["lift", "--config", str(cfg)])
    assert code == 2
    assert ":3:3:" in err


@pytest.mark.parametrize("argv", [
    ["lift", "--scenario", "missing"],
    ["lift", "--scenario", "example1", "--connection", "H9"],
    ["lift", "--scenario", "example1", "--param", "sections=1.5"],
    ["lift", "--scenario", "example1", "--y0", "1", "2"],
    ["lift", "--scenario", "example1", "--t1", "-1"],
    ["length", "--scenario", "example1"],
    ["lift", "--bogus-flag"],
])
def test_validation_errors_exit_two(argv):
    assert run(argv)[0] == 2


def test_numerical_failure_exits_three():
    code, _, err = run(["length", "--scenario", "example3", "--param", "shift=0", "--param", "k_max=8"])
    assert code == 3 and "NonConvergent" in err


def test_out_file(tmp_path):
    path = tmp_path / "g.csv"
    code, out, _ = run(["geodesic", "--scenario", "product-flat", "--velocity", "1", "1", "--horizon", "2",
                        "--out", str(path)])
    assert code == 0 and out == ""
    rows = path.read_text().splitlines()
    assert rows[0].startswith("t,chart_id,b1,f1,height,status,v_b1,v_f1")
    assert rows[-1].split(",")[5] == "Completed"


def test_probe_threads_do_not_change_output(monkeypatch):
    argv = ["probe", "--scenario", "example1", "--connection", "H1", "--trials", "4", "--horizon", "3"]
    monkeypatch.setenv("EHRESMANN_LAB_THREADS", "1")
    one = run(argv)[1]
    monkeypatch.setenv("EHRESMANN_LAB_THREADS", "4")
    four = run(argv)[1]
    assert one == four


def test_json_sanitizer():
    import numpy as np

    doc = jsonable({"a": np.float64(1.5), "b": np.arange(2), "c": float("nan"), "d": (np.bool_(True),)})
    assert doc == {"a": 1.5, "b": [0, 1], "c": None, "d": [True]}
    assert dump_json({"b": 1, "a": 2}).index('"a"') < dump_json({"b": 1, "a": 2}).index('"b"')
