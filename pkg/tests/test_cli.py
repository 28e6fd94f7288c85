import json

import pytest

from freezerid import cli, io

SMALL = """
[run]
seed = 3
[simulate]
duration = 300
[fit]
free = C_c, R_ce, nu
restarts = 1
max_iters = 200
[profile]
param = C_c
points = 3
factor = 2
partners = R_ce
[predict]
warmup = 100
[diagnose]
max_lag = 20
[retune]
free = C_c
restarts = 1
max_iters = 100
"""


def _run(tmp_path, *argv, config=SMALL):
    cfg = tmp_path / "run.ini"
    cfg.write_text(config)
    return cli.main([argv[0], "--config", str(cfg), "--out", str(tmp_path / "out"), *argv[1:]])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    out = tmp / "out"
    assert _run(tmp, "simulate") == cli.EXIT_OK
    data, report = str(out / "data.csv"), str(out / "fit_report.json")
    codes = {"fit": _run(tmp, "fit", "--data", data)}
    for cmd in ("predict", "profile", "diagnose", "retune"):
        codes[cmd] = _run(tmp, cmd, "--data", data, "--report", report)
    return tmp, out, codes


def test_pipeline_runs_end_to_end(pipeline):
    _, out, codes = pipeline
    assert all(c == cli.EXIT_OK for c in codes.values()), codes
    for name in ("data.csv", "truth.json", "states.csv", "fit_report.json", "predict.csv",
                 "predict_summary.json", "profile_C_c.csv", "profile_C_c.json", "diagnostics_acf.csv",
                 "diagnostics_cp.csv", "diagnostics_residuals.csv", "diagnostics_summary.json",
                 "retune_report.json", "relative_changes.csv"):
        assert (out / name).is_file(), name


def test_pipeline_artifacts_are_well_formed(pipeline):
    _, out, _ = pipeline
    assert len(io.ingest(out / "data.csv")) == 300
    report = io.read_fit_report(out / "fit_report.json")
    assert report.free_names == ("C_c", "R_ce", "nu")
    lines = (out / "predict.csv").read_text().splitlines()
    assert lines[0] == "t_min,observed,predicted,lo95,hi95,S,T_e_hypothetical,T_e_estimated"
    assert len(lines) == 1 + 200
    summary = json.loads((out / "predict_summary.json").read_text())
    assert summary["n"] == 200 and summary["start"] == 100
    assert len((out / "profile_C_c.csv").read_text().splitlines()) == 4
    retune = io.read_fit_report(out / "retune_report.json")
    assert set(retune.relative_changes) == {"C_c"}


def test_identical_configs_give_identical_artifacts(pipeline, tmp_path):
    _, out, _ = pipeline
    assert _run(tmp_path, "simulate") == cli.EXIT_OK
    assert _run(tmp_path, "fit", "--data", str(tmp_path / "out" / "data.csv")) == cli.EXIT_OK
    for name in ("data.csv", "states.csv", "fit_report.json"):
        assert (tmp_path / "out" / name).read_bytes() == (out / name).read_bytes(), name


def test_seed_override_changes_data(pipeline, tmp_path):
    _, out, _ = pipeline
    assert _run(tmp_path, "simulate", "--seed", "4") == cli.EXIT_OK
    assert (tmp_path / "out" / "data.csv").read_bytes() != (out / "data.csv").read_bytes()


def test_predict_accepts_parameter_file(pipeline, tmp_path):
    _, out, _ = pipeline
    code = _run(tmp_path, "predict", "--data", str(out / "data.csv"), "--report", str(out / "truth.json"))
    assert code == cli.EXIT_OK


def test_usage_errors(tmp_path, capsys):
    assert cli.main(["frobnicate"]) == cli.EXIT_USAGE
    assert cli.main([]) == cli.EXIT_USAGE
    assert _run(tmp_path, "fit") == cli.EXIT_USAGE
    assert "requires --data" in capsys.readouterr().err
    assert _run(tmp_path, "simulate", "--threads", "0") == cli.EXIT_USAGE
    assert cli.main(["--help"]) == cli.EXIT_OK


def test_config_errors(tmp_path, capsys):
    assert _run(tmp_path, "simulate", config="[run]\nbogus = 1\n") == cli.EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err
    assert cli.main(["simulate", "--config", str(tmp_path / "none.ini")]) == cli.EXIT_CONFIG


def test_data_errors(pipeline, tmp_path, capsys):
    _, out, _ = pipeline
    assert _run(tmp_path, "fit", "--data", str(tmp_path / "missing.csv")) == cli.EXIT_DATA
    bad = tmp_path / "bad.csv"
    bad.write_text("t_min,T_c,T_e_in,T_e_out,T_a,m\n0,-80,-95,-40,22,7\n")
    assert _run(tmp_path, "fit", "--data", str(bad)) == cli.EXIT_DATA
    assert "bad.csv:2:6" in capsys.readouterr().err
    corrupt = tmp_path / "r.json"
    corrupt.write_text("{")
    assert _run(tmp_path, "predict", "--data", str(out / "data.csv"), "--report", str(corrupt)) == cli.EXIT_DATA


def test_numerical_failure_exit_code(pipeline, tmp_path):
    _, out, _ = pipeline
    cfg = SMALL.replace("free = C_c, R_ce, nu", "free = C_e") + "[init]\nC_e = 1e-7\nbeta = -100\n"
    cfg = cfg.replace("[fit]\n", "[fit]\ninit = truth\n")
    code = _run(tmp_path, "fit", "--data", str(out / "data.csv"), config=cfg)
    assert code == cli.EXIT_NUMERICAL


def test_profile_rejects_parameter_not_in_fit(pipeline, tmp_path):
    _, out, _ = pipeline
    code = _run(tmp_path, "profile", "--data", str(out / "data.csv"), "--report", str(out / "fit_report.json"),
                config=SMALL.replace("param = C_c", "param = C_w"))
    assert code == cli.EXIT_CONFIG
