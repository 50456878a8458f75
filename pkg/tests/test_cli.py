import json
import subprocess
import sys

import pytest

from deconflict.cli import EXIT_AUDIT, EXIT_INFEASIBLE, EXIT_OK, EXIT_TIMEOUT, EXIT_USAGE, main
from deconflict.instances import gen_cp, save_instance
from deconflict.solver import Solution, save_solution


def run(argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:  # argparse errors
        return exc.code


@pytest.fixture
def cp4(tmp_path):
    return save_instance(gen_cp(4), tmp_path / "CP-4.json")


def test_gen_cp(tmp_path):
    assert run(["gen", "cp", "--n", "7", "--out", tmp_path]) == EXIT_OK
    obj = json.loads((tmp_path / "CP-7.json").read_text())
    assert len(obj["aircraft"]) == 7 and obj["id"] == "CP-7"
    assert run(["gen", "cp", "--n", "4..6", "--out", tmp_path]) == EXIT_OK
    assert {p.name for p in tmp_path.glob("CP-*.json")} == {"CP-4.json", "CP-5.json", "CP-6.json",
                                                            "CP-7.json"}


def test_gen_rcp_and_manifest(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["gen", "rcp", "--n", "10", "--count", "100", "--seed-base", "1", "--out", a]) == 0
    names = sorted(p.name for p in a.glob("RCP-10-[0-9]*.json"))
    assert len(names) == 100
    assert "RCP-10-1.json" in names and "RCP-10-100.json" in names
    assert run(["gen", "rcp", "--manifest", a / "RCP-10-manifest.json", "--out", b]) == 0
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_gen_bad_flag(tmp_path, capsys):
    assert run(["gen", "cp", "--n", "x..y", "--out", tmp_path]) == EXIT_USAGE
    assert "--n" in capsys.readouterr().err
    assert run(["gen", "rcp", "--n", "10,12", "--out", tmp_path]) == EXIT_USAGE
    assert run(["gen", "cp", "--out", tmp_path]) == EXIT_USAGE


def test_solve_deterministic_and_robust(tmp_path, cp4, capsys):
    out = tmp_path / "s0.json"
    assert run(["solve", "--instance", cp4, "--out", out]) == EXIT_OK
    r0 = json.loads(capsys.readouterr().out)
    assert r0["status"] == "Optimal" and r0["audit_deterministic"]["passed"]
    out4 = tmp_path / "s4.json"
    assert run(["solve", "--instance", cp4, "--gamma", 4, "--eps", 0.05, "--w", 0.5,
                "--gap", 0.01, "--time-limit", 600, "--out", out4]) == EXIT_OK
    r4 = json.loads(capsys.readouterr().out)
    assert r4["status"] == "Optimal" and r4["audit_robust"]["passed"]
    assert r4["ub"] > r0["ub"]
    assert json.loads(out4.read_text())["status"] == "Optimal"


def test_solve_infeasible(tmp_path, tmp_path_factory):
    inst = save_instance(gen_cp(3), tmp_path / "CP-3.json")
    code = run(["solve", "--instance", inst, "--q-lo", 1, "--q-hi", 1, "--heading-lo-deg", 0,
                "--heading-hi-deg", 0, "--out", tmp_path / "x.json"])
    assert code == EXIT_INFEASIBLE


def test_solve_bad_inputs(tmp_path, cp4, capsys):
    assert run(["solve", "--instance", tmp_path / "missing.json"]) == EXIT_USAGE
    assert run(["solve", "--instance", cp4, "--gamma", 7, "--eps", 0.05]) == EXIT_USAGE
    assert "--gamma" in capsys.readouterr().err
    assert run(["solve", "--instance", cp4, "--w", 1.5]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text('{"id": "x", "aircraft": []}')
    assert run(["solve", "--instance", bad]) == EXIT_USAGE


def test_exit_code_constants():
    assert (EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_TIMEOUT, EXIT_AUDIT) == (0, 2, 3, 4, 5)


def test_verify(tmp_path, cp4, capsys):
    sol = tmp_path / "s.json"
    run(["solve", "--instance", cp4, "--gamma", 4, "--eps", 0.05, "--out", sol])
    capsys.readouterr()
    mc = tmp_path / "mc.csv"
    assert run(["verify", "--instance", cp4, "--solution", sol, "--gamma", 4, "--eps", 0.05,
                "--samples", 10000, "--seed", 3, "--mc-csv", mc]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["passed"] and rep["monte_carlo"]["rate"] == 0.0
    assert mc.read_text().splitlines()[0] == "seed,samples,rate"
    nominal = tmp_path / "nominal.json"
    save_solution(nominal, Solution("Feasible", ((1.0, 0.0),) * 4, ((1.0, 0.0),) * 4,
                                    ((0.0, 0.0),) * 4, (0,) * 6, 0.0, 0.0))
    assert run(["verify", "--instance", cp4, "--solution", nominal]) == EXIT_AUDIT
    rep = json.loads(capsys.readouterr().out)
    assert len(rep["deterministic"]["violations"]) == 6
    assert run(["verify", "--instance", cp4, "--solution", tmp_path / "nope.json"]) == EXIT_USAGE


def test_bench_and_plots(tmp_path, cp4, capsys):
    bench = tmp_path / "bench"
    assert run(["bench", "--cp", "3,4", "--gammas", "0,4", "--eps-list", "0.05",
                "--out", bench]) == EXIT_OK
    assert (bench / "results.csv").exists() and (bench / "summary.csv").exists()
    strip = tmp_path / "strip.svg"
    assert run(["plot", "strip", "--bench-dir", bench, "--instance", cp4, "--out", strip]) == 0
    assert strip.read_text().startswith("<?xml")
    sc = tmp_path / "sc.svg"
    assert run(["plot", "scatter", "--results", bench / "results.csv", "--out", sc]) == 0
    hist = tmp_path / "h.svg"
    assert run(["plot", "hist", "--instances", cp4, "--out", hist]) == 0
    traj = tmp_path / "t.svg"
    det = bench / "solutions" / "CP-4__g0__e0.05.json"
    rob = bench / "solutions" / "CP-4__g4__e0.05.json"
    assert run(["plot", "trajectories", "--instance", cp4, "--det", det, "--robust", rob,
                "--gamma", 4, "--eps", 0.05, "--out", traj]) == 0
    # a robust file audited under a larger budget than it was solved for is refused
    assert run(["plot", "trajectories", "--instance", cp4, "--robust", det, "--gamma", 4,
                "--eps", 0.05, "--out", traj]) == EXIT_USAGE
    assert run(["plot", "scatter", "--out", sc]) == EXIT_USAGE
    assert run(["plot", "hist", "--instances", tmp_path / "missing.json", "--out", hist]) == 2


def test_strip_refuses_failed_audit(tmp_path, cp4):
    bench = tmp_path / "bench"
    run(["bench", "--cp", "4", "--gammas", "0", "--eps-list", "0.05", "--out", bench])
    rec = bench / "cells" / "CP-4__g0__e0.05.json"
    obj = json.loads(rec.read_text())
    obj["row"]["audit_passed"] = False
    rec.write_text(json.dumps(obj))
    assert run(["plot", "strip", "--bench-dir", bench, "--instance", cp4,
                "--out", tmp_path / "s.svg"]) == EXIT_USAGE


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "deconflict.cli", "gen", "cp", "--n", "3",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0 and (tmp_path / "CP-3.json").exists()
