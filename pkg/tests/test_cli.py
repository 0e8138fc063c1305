import subprocess
import sys

import pytest

from irkcond.cli import main


def run(capsys, *args):
    code = main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_tableau(capsys):
    code, out, _ = run(capsys, "tableau", "radau1a3")
    assert code == 0
    assert "0.3333-0.2357i" in out and "sigma_max: 0.5000" in out and "lambda_min_sym: 0.2500" in out


def test_tableau_file(capsys, tmp_path):
    p = tmp_path / "ria.txt"
    p.write_text("2\n1/4 -1/4\n1/4 5/12\n1/4 3/4\n0 2/3\n")
    code, out, _ = run(capsys, "tableau", "custom", "--file", str(p))
    assert code == 0 and "sigma_max: 0.5000" in out


def test_analyze(capsys):
    code, out, _ = run(capsys, "analyze", "--n", "4", "--method", "gauss4", "--dt", "1e-3", "--P", "M_D")
    assert code == 0 and "exact kappa_tilde" in out and "irk-coercive" in out


def test_sweep_csv(capsys, tmp_path):
    out_path = tmp_path / "s.csv"
    code, out, err = run(capsys, "sweep", "--n", "4", "8", "16", "--method", "euler", "--dt", "0.1",
                         "--P", "jacobi", "--out", str(out_path), "--slope")
    assert code == 0 and "wrote 3 rows" in out and "slope euler" in err
    lines = out_path.read_text().splitlines()
    assert lines[0].startswith("method,mesh,n,N") and len(lines) == 4


def test_sweep_config_file(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n = [4]\nmethods = radau1a3\ndt = [0.01]\nP = [\"none\"]\n")
    code, out, _ = run(capsys, "sweep", "--config", str(cfg), "--log-solves")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].endswith("eisenstat_factor") and lines[1].startswith("radau1a3,uniform,4,")


def test_scaling(capsys):
    code, out, _ = run(capsys, "scaling", "--n", "8", "--dt", "1e-3")
    assert code == 0 and out.splitlines()[0].endswith("ratio") and len(out.splitlines()) == 3


def test_step(capsys, tmp_path):
    code, out, _ = run(capsys, "step", "--n", "6", "--method", "gauss4", "--steps", "3", "--log-solves")
    assert code == 0 and "final l2 norm" in out and "gmres," in out
    code, out2, _ = run(capsys, "step", "--n", "6", "--method", "gauss4", "--steps", "3", "--strategy", "simultaneous")
    a = float(out.splitlines()[1].split("=")[1])
    b = float(out2.splitlines()[1].split("=")[1])
    assert a == pytest.approx(b, rel=1e-9)


def test_dump(capsys, tmp_path):
    code, out, _ = run(capsys, "dump", str(tmp_path), "--n", "3")
    assert code == 0
    assert (tmp_path / "M.txt").read_text().splitlines()[0].startswith("4 ")
    assert (tmp_path / "metric.csv").read_text().startswith("element,vol,h_metric,a_metric,ratio")


def test_config_error_exit(capsys):
    code, _, err = run(capsys, "sweep", "--n", "4", "--P", "none", "--dt", "-1")
    assert code == 2 and "error" in err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "irkcond", "tableau", "euler"], capture_output=True, text=True)
    assert res.returncode == 0 and "sigma_max: 1.0000" in res.stdout
