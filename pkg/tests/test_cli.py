import json
import subprocess
import sys

import pytest

from kcmlab.cli import main


def run_cli(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_env_geom_bp_exact_pipeline(tmp_path, capsys):
    env_path = str(tmp_path / "w.kcme")
    code, out, _ = run_cli(["env", "--pi", "0.65", "--width", "12", "--height", "12",
                            "--seed", "7", "--out", env_path], capsys)
    assert code == 0
    info = json.loads(out)
    assert info["written"] == env_path

    code, out, _ = run_cli(["geom", "--env-file", env_path, "--box-side", "3",
                            "--path-length", "2"], capsys)
    assert code == 0
    geom = json.loads(out)
    assert {"c0", "boundary", "t0", "diameter", "path", "cluster_sizes"} <= geom.keys()

    grid_csv = str(tmp_path / "grid.csv")
    code, out, _ = run_cli(["bp", "--env-file", env_path, "--q", "0.2", "--seed", "1",
                            "--grid-out", grid_csv], capsys)
    assert code == 0
    res = json.loads(out)
    assert "tau0" in res and "censored" in res
    header = open(grid_csv).readline().strip()
    assert header == "x,y,emptied_at"

    code, out, _ = run_cli(["exact", "--env-file", env_path, "--region", "5,5,2,2",
                            "--q", "0.3", "--boundary", "empty"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["finite"] in (True, False)
    assert rep["gap"] >= 0


def test_kcm_targets(tmp_path, capsys):
    env_path = str(tmp_path / "w.kcme")
    run_cli(["env", "--pi", "0.7", "--width", "10", "--height", "10",
             "--seed", "3", "--out", env_path], capsys)
    csv_path = str(tmp_path / "trials.csv")
    code, out, _ = run_cli(["kcm", "--env-file", env_path, "--q", "0.3",
                            "--t-max", "500", "--trials", "50", "--seed", "2",
                            "--csv-out", csv_path], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["target"] == "origin"
    assert rep["summary"]["n"] == 50
    lines = open(csv_path).read().strip().splitlines()
    assert lines[0] == "trial,tau,censored,rings"
    assert len(lines) == 51


def test_sweep_config(tmp_path, capsys):
    cfg = {"model": "fa12", "pi": 0.6, "q_list": [0.3, 0.2, 0.1], "window": 21,
           "trials": 10, "seed": 5, "dynamics": "bp",
           "output_dir": str(tmp_path / "out")}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    code, out, _ = run_cli(["sweep", str(cfg_path)], capsys)
    assert code == 0
    rep = json.loads(out)
    assert "bp" in rep["results"]
    assert (tmp_path / "out" / "summary.json").exists()


def test_error_is_machine_readable(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["geom", "--env-file", str(tmp_path / "missing.kcme")])
    assert exc.value.code != 0
    err = capsys.readouterr().err
    payload = json.loads(err)
    assert "error" in payload and "message" in payload


def test_cli_entrypoint_subprocess(tmp_path):
    env_path = str(tmp_path / "w.kcme")
    out = subprocess.run([sys.executable, "-m", "kcmlab.cli", "env", "--pi", "0.6",
                          "--width", "8", "--height", "8", "--seed", "1",
                          "--out", env_path], capture_output=True, text=True)
    assert out.returncode == 0
    bad = subprocess.run([sys.executable, "-m", "kcmlab.cli", "bp", "--env-file",
                          env_path, "--q", "7"], capture_output=True, text=True)
    assert bad.returncode != 0
    assert json.loads(bad.stderr)["error"]
