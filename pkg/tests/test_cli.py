import csv
import io
import json
import os
import subprocess
import sys

import pytest

from dynkin.cli import run_command

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def cfg(name):
    return os.path.join(CONFIGS, name)


def run(*argv):
    return subprocess.run([sys.executable, "-m", "dynkin", *argv], capture_output=True, text=True)


def test_solve_json():
    p = run("solve", "--config", cfg("tanh.toml"), "--format", "json", "--quiet")
    assert p.returncode == 0, p.stderr
    doc = json.loads(p.stdout)
    eq = doc["equilibrium"]
    assert doc["schema_version"] == 1 and doc["command"] == "solve"
    assert eq["regime"] == "interior_thresholds"
    assert eq["x1_star"] == pytest.approx(-0.8417273104, abs=1e-9)
    assert eq["x2_star"] == pytest.approx(1.8417273104, abs=1e-9)


def test_solve_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert run_command(["solve", "--config", cfg("tanh.toml"), "--out", str(out), "--seed",
                            "3", "--quiet"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_check_failure_names_assumption():
    p = run("check", "--config", cfg("badgamma.toml"))
    assert p.returncode == 1
    assert "(ii)" in p.stderr
    assert json.loads(p.stdout)["assumptions"]["ii_classes"] is False


def test_configuration_errors_exit_2(tmp_path):
    assert run_command(["solve", "--config", str(tmp_path / "missing.toml"), "--quiet"]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text('[process]\npreset = "bm"\n[discount]\nrate = 0.5\n'
                   '[costs]\nG1 = "x*"\nG2 = "x"\nL1 = "x"\nL2 = "x"\n')
    p = run("solve", "--config", str(bad))
    assert p.returncode == 2 and "parse error" in p.stderr and p.stdout == ""
    assert run_command(["frobnicate", "--config", cfg("tanh.toml")]) == 2
    assert run_command(["verify", "--config", cfg("tanh.toml"), "--paths", "0", "--quiet"]) == 2


def test_classify_exit_boundary():
    p = run("classify", "--config", cfg("besq_exit.toml"), "--quiet")
    doc = json.loads(p.stdout)
    assert p.returncode == 0
    assert doc["boundaries"]["lower"]["inferred"] == "exit_not_entrance"


def test_sweep_csv():
    p = run("sweep", "--config", cfg("bessel_entrance.toml"), "--format", "csv", "--quiet")
    assert p.returncode == 0, p.stderr
    rows = list(csv.DictReader(io.StringIO(p.stdout)))
    regimes = [r["regime"] for r in rows]
    assert regimes[0] == "interior_thresholds" and regimes[-1] == "p1_never_stops"
    assert all(r["x2_star"] for r in rows)


def test_export_csv(tmp_path):
    out = tmp_path / "v.csv"
    assert run_command(["export", "--config", cfg("tanh.toml"), "--format", "csv", "--points",
                        "21", "--out", str(out), "--quiet"]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert len(rows) == 21 and set(rows[0]) == {"x", "v1", "v2", "region1", "region2"}


def test_seed_precedence(monkeypatch, tmp_path):
    from dynkin import cli
    from dynkin.config import DEFAULT_SEED, load_config
    c = load_config(cfg("tanh.toml"))
    args = cli.build_parser().parse_args(["verify", "--config", "x"])
    monkeypatch.delenv("DYNKIN_SEED", raising=False)
    assert cli._seed(args, c) == DEFAULT_SEED
    monkeypatch.setenv("DYNKIN_SEED", "11")
    assert cli._seed(args, c) == 11
    args.seed = 4
    assert cli._seed(args, c) == 4


def test_verify_small_run(tmp_path):
    out = tmp_path / "verify.json"
    code = run_command(["verify", "--config", cfg("tanh.toml"), "--paths", "4000", "--out",
                        str(out), "--quiet"])
    doc = json.loads(out.read_text())
    assert doc["variational"]["passed"]
    mc = doc["montecarlo"][0]
    assert mc["x0"] == 0.5 and "martingale" in mc and "deviation" in mc
    assert code == (0 if doc["passed"] else 1)
