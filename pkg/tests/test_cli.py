import subprocess
import sys

import pytest

from ksrobust.cli import main
from ksrobust.io import parse_config, read_field_csv, read_report_csv


def run(tmp_path, text, command, name="run"):
    cfg = tmp_path / f"{name}.txt"
    cfg.write_text(text)
    out = tmp_path / name
    return main([command, "--config", str(cfg), "--out", str(out), "-q"]), out


def test_solve_writes_fields_and_config(tmp_path):
    code, out = run(tmp_path, "T=1\nn_elems=20\nn_steps=10\nu0=sin2\nstride=5\n", "solve")
    assert code == 0
    u = read_field_csv(out / "u.csv")
    assert u.values.shape == (3, 21)
    assert (out / "w.csv").exists()
    cfg = parse_config((out / "config.txt").read_text())
    assert cfg.command == "solve" and cfg.n_steps == 10 and cfg.out == str(out)


def test_robust_converges(tmp_path):
    text = "T=1\nn_elems=50\ndt=2e-2\nell=40\ngamma=40\nO=-10,10\nu_d=fig3\n"
    code, out = run(tmp_path, text, "robust")
    assert code == 0
    rows = read_report_csv(out / "report.csv")
    assert rows and rows[-1]["grad_v_norm"] + rows[-1]["grad_psi_norm"] < 1e-6
    for name in ("u", "z", "v", "psi"):
        assert (out / f"{name}.csv").exists()


def test_robust_iteration_cap_exit_code(tmp_path):
    text = "T=1\nn_elems=50\ndt=2e-2\nell=40\ngamma=40\nO=-10,10\nu_d=fig3\nmax_iter=0\ntol=1e-14\n"
    code, out = run(tmp_path, text, "robust")
    assert code == 2
    assert len((out / "report.csv").read_text().splitlines()) == 2


def test_rsc_outputs(tmp_path):
    text = "T=1\nn_elems=30\nn_steps=20\nell=40\ngamma=40\nbeta=1e-2\nomega=-3,1\nO=2,5\nu0=gauss3\ntol=0\nrtol=1e-3\nmax_iter=3\n"
    code, out = run(tmp_path, text, "rsc")
    assert code in (0, 2)
    rows = read_report_csv(out / "report.csv")
    G = [r["G"] for r in rows]
    assert all(b <= a for a, b in zip(G, G[1:]))
    assert all(r["Jr_total"] is None for r in rows)
    for name in ("h", "u", "z", "v", "psi", "phi1", "phi2"):
        assert (out / f"{name}.csv").exists()


def test_rsc_cap_exit_code(tmp_path):
    text = "T=1\nn_elems=30\nn_steps=20\nell=40\ngamma=40\nbeta=1e-2\nomega=-3,1\nO=2,5\nu0=gauss3\ntol=0\nmax_iter=0\n"
    assert run(tmp_path, text, "rsc")[0] == 2


def test_mms_table(tmp_path):
    code, out = run(tmp_path, "T=1\nn_elems=10\ndt=0.1\nn_list=10,20\ndt_list=0.1,0.05\n", "mms")
    assert code == 0
    lines = (out / "mms_table.csv").read_text().splitlines()
    assert len(lines) == 5 and lines[1].startswith("0.10000000000000001,10,")


def test_mms_failure_rows_exit_1(tmp_path):
    code, out = run(tmp_path, "T=1\nn_elems=10\ndt=0.1\ndt_list=0.3\n", "mms")
    assert code == 1
    assert "ValueError" in (out / "mms_table.csv").read_text()


def test_config_error_exit_1(tmp_path, caplog):
    code, _ = run(tmp_path, "T=1\nn_elems=10\ndt=0.1\nO=40,50\n", "solve")
    assert code == 1
    code, _ = run(tmp_path, "T=1\nn_elems=10\ndt=0.1\n", "robust")
    assert code == 1
    assert main(["solve", "--config", str(tmp_path / "absent.txt")]) == 1


def test_bad_verb_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["fly", "--config", "x"])
    assert info.value.code == 2


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("T=1\nn_elems=8\nn_steps=4\n")
    res = subprocess.run([sys.executable, "-m", "ksrobust", "solve", "--config", str(cfg), "--out", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "solved 4 steps" in res.stderr
