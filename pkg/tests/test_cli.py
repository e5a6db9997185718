import json


from mlsqp.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUN_FAILURE, main


def test_solve_writes_trace_and_summary(tmp_path, capsys):
    assert main(["solve", "--problem", "maratos", "--out", str(tmp_path)]) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed["status"] == "converged"
    assert (tmp_path / printed["trace"]).exists()
    assert (tmp_path / printed["summary"]).exists()


def test_solve_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("MLSQP_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["solve", "--problem", "hs007", "--method", "soc"]) == EXIT_OK
    assert list((tmp_path / "env").glob("*.csv"))


def test_solve_iteration_limit_is_run_failure(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[solver]\nmax_iterations = 1\n")
    assert main(["solve", "--problem", "rosenbrock", "--config", str(cfg),
                 "--out", str(tmp_path)]) == EXIT_RUN_FAILURE


def test_configuration_errors(tmp_path):
    assert main(["solve", "--problem", "nope", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["solve", "--problem", "maratos", "--method", "newton"]) == EXIT_CONFIG
    assert main(["bench", "--plan", str(tmp_path / "missing.ini")]) == EXIT_CONFIG
    assert main([]) == EXIT_CONFIG


def test_bench_and_profiles(tmp_path, capsys):
    plan = tmp_path / "plan.ini"
    plan.write_text("[plan]\nproblems = maratos, hs007\nmethods = ours, sqp-l1, soc\n")
    out = tmp_path / "bench"
    assert main(["bench", "--plan", str(plan), "--out", str(out)]) == EXIT_OK
    assert "6 runs (6 executed)" in capsys.readouterr().out
    assert main(["bench", "--plan", str(plan), "--out", str(out)]) == EXIT_OK
    assert "(0 executed)" in capsys.readouterr().out

    dm = tmp_path / "dm.json"
    assert main(["profile", "--kind", "dolan-more", "--in", str(out), "--out", str(dm)]) == EXIT_OK
    data = json.loads(dm.read_text())
    assert set(data["curves"]) == {"ours", "sqp-l1", "soc"}
    mo = tmp_path / "mo.json"
    assert main(["profile", "--kind", "morales", "--in", str(out), "--out", str(mo)]) == EXIT_CONFIG
    assert main(["profile", "--kind", "dolan-more", "--in", str(tmp_path / "empty"),
                 "--out", str(dm)]) == EXIT_CONFIG


def test_morales_with_two_methods(tmp_path):
    plan = tmp_path / "plan.ini"
    plan.write_text("[plan]\nproblems = maratos\nmethods = ours, sqp-l1\n")
    out = tmp_path / "bench"
    assert main(["bench", "--plan", str(plan), "--out", str(out)]) == EXIT_OK
    mo = tmp_path / "mo.json"
    assert main(["profile", "--kind", "morales", "--in", str(out), "--out", str(mo)]) == EXIT_OK
    vals = json.loads(mo.read_text())["values"]
    assert vals[0]["problem"] == "maratos" and -10 <= vals[0]["value"] <= 10


def test_check_command(capsys):
    assert main(["check", "--problem", "hs007", "--points", "2"]) == EXIT_OK
    assert capsys.readouterr().out.count("ok") == 3
