import json

import pytest

from robustsdr import cli
from robustsdr.formulations import SolveError
from robustsdr.sdp_solver import ConicSolution, Status


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def instance_file(tmp_path, capsys):
    path = tmp_path / "inst.json"
    code, _, _ = run(["gen", "--seed", 3, "--gamma-db", 4, "--out", path], capsys)
    assert code == 0
    return path


def test_gen_to_stdout(capsys):
    code, out, _ = run(["gen", "--nt", 2, "--k", 3, "--seed", 1], capsys)
    d = json.loads(out)
    assert code == 0 and d["nt"] == 2 and d["k"] == 3 and len(d["hbar"]) == 3


def test_gen_then_solve(instance_file, tmp_path, capsys):
    design = tmp_path / "design.json"
    dump = tmp_path / "conic.txt"
    code, _, _ = run(["solve", instance_file, "--out", design, "--dump-conic", dump], capsys)
    assert code == 0
    d = json.loads(design.read_text())
    assert d["power"] > 0 and len(d["w"]) == 4 and max(d["rank_profile"]) <= 1e-6
    assert dump.read_text().startswith("# m=")


def test_solve_infeasible_exit_2(tmp_path, capsys):
    path = tmp_path / "hard.json"
    run(["gen", "--gamma-db", 60, "--out", path], capsys)
    code, _, err = run(["solve", path], capsys)
    assert code == 2 and "PrimalInfeasible" in err


def test_numerical_failure_exit_3(instance_file, capsys, monkeypatch):
    def fail(inst):
        sol = ConicSolution(Status.NUMERICAL_FAILURE, [], None, [], 0.0, 0.0, 0.0,
                            message="synthetic")
        raise SolveError("robust SDR", sol)
    monkeypatch.setattr(cli, "solve_wsp_sdr", fail)
    code, _, _ = run(["solve", instance_file], capsys)
    assert code == 3


def test_verify_duality(instance_file, capsys):
    code, out, _ = run(["verify-duality", instance_file, "--no-probe"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["status"] == "Optimal" and rep["rel_gap"] <= 1e-6


def test_oracle(instance_file, tmp_path, capsys):
    design = tmp_path / "design.json"
    run(["solve", instance_file, "--out", design], capsys)
    code, out, _ = run(["oracle", instance_file, "--design", design], capsys)
    d = json.loads(out)
    assert code == 0 and d["source"] == "w" and d["robust_feasible"]

    # the covariance form is accepted too
    full = json.loads(design.read_text())
    del full["w"]
    design.write_text(json.dumps(full))
    code, out, _ = run(["oracle", instance_file, "--design", design], capsys)
    assert code == 0 and json.loads(out)["source"] == "W"


def test_sweep(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"nt": 2, "k": 2, "trials": 2, "gamma_db_grid": [0, 3],
                               "probe": False}))
    code, out, _ = run(["sweep", "--config", cfg, "--out", tmp_path / "out", "--workers", 1],
                       capsys)
    assert code == 0 and "wrote" in out
    assert (tmp_path / "out" / "records.csv").exists()
    assert (tmp_path / "out" / "aggregate.csv").exists()


def test_malformed_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"nt": 1,\n "k": }')
    code, _, err = run(["solve", bad], capsys)
    assert code == 1 and "line 2" in err


def test_missing_field(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"nt": 1, "k": 1}')
    code, _, err = run(["solve", bad], capsys)
    assert code == 1 and "missing field 'hbar'" in err


def test_bad_design_shape(instance_file, tmp_path, capsys):
    design = tmp_path / "d.json"
    design.write_text('{"w": [[[1, 0]]]}')
    code, _, err = run(["oracle", instance_file, "--design", design], capsys)
    assert code == 1 and "shape" in err


def test_missing_file(capsys):
    code, _, err = run(["solve", "/nonexistent/inst.json"], capsys)
    assert code == 1 and "No such file" in err


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["oracle", "inst.json"])
    assert exc.value.code == 1


def test_help_mentions_flags(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["sweep", "--help"])
    out = capsys.readouterr().out
    assert exc.value.code == 0 and "--workers" in out and cli.WORKERS_ENV in out
