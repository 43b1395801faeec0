import csv
import subprocess
import sys

import pytest
from conftest import read_legacy_vtk

from pbilap.cli import main


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def test_solve_linear_cubic(tmp_path):
    code, out = run(tmp_path, "solve", "--case", "cubic_1d", "--p", "2", "--n", "32", "--k", "1")
    assert code == 0
    report = read_rows(out / "report.csv")
    assert len(report) == 1
    assert report[0]["newton_iters_total"] == "1"
    assert report[0]["converged"] == "true"
    diag = read_rows(out / "diagnostics.csv")[0]
    assert diag["newton_iterations"] == "1"
    assert float(diag["stability_margin"]) >= -1e-6
    sol = read_rows(out / "solution_p2.csv")
    assert list(sol[0]) == ["x", "u", "w"]
    assert len(sol) == 33
    points, cells, types, data = read_legacy_vtk(out / "field_p2.vtk")
    assert set(data) == {"u", "w", "lap_u"}
    assert (out / "field_p2.dat").exists()


def test_solve_cosine(tmp_path):
    code, out = run(tmp_path, "solve", "--case", "cosine_2d", "--m", "1", "--p", "4", "--n", "16", "--k", "1")
    assert code == 0
    assert read_rows(out / "report.csv")[0]["converged"] == "true"
    diag = read_rows(out / "diagnostics.csv")[0]
    assert 0.0 <= float(diag["mode_fraction"]) <= 1.0


def test_solve_manufactured_reports_errors(tmp_path):
    code, out = run(tmp_path, "solve", "--p", "2", "--n", "4")
    assert code == 0
    diag = read_rows(out / "diagnostics.csv")[0]
    assert float(diag["err_w_Lq"]) > 0 and float(diag["err_gradu_Lp"]) > 0
    assert diag["stability_margin"] == ""


@pytest.mark.parametrize(
    "argv",
    [
        ["solve", "--case", "cubic_1d", "--mesh", "criss_cross"],
        ["solve", "--case", "cosine_2d", "--mesh", "interval"],
        ["solve", "--case", "cubic_1d", "--m", "2"],
        ["solve", "--k", "3"],
        ["solve", "--p", "1.5"],
        ["benchmark", "--case", "cubic_1d"],
        ["psweep", "--case", "manufactured_sine"],
        ["psweep", "--p-schedule", ""],
        ["psweep", "--p-schedule", "4,2"],
    ],
)
def test_usage_errors(tmp_path, capsys, argv):
    assert main([*argv, "--out", str(tmp_path / "x")]) == 2
    err = capsys.readouterr().err
    assert "usage: pbilap" in err
    assert "error:" in err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\ncolour = blue\n")
    assert main(["solve", "--config", str(cfg)]) == 2


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\ncase = cubic_1d\np = 4\nn = 8\nk = 2\n[newton]\nabs_tol = 1e-9\n")
    code, out = run(tmp_path, "solve", "--config", str(cfg), "--p", "3")
    assert code == 0
    row = read_rows(out / "report.csv")[0]
    assert row["p"] == "3" and row["k"] == "2" and row["dofs"] == "17"


def test_solve_nonconvergence_keeps_outputs(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[newton]\nmax_iters = 1\n")
    code, out = run(tmp_path, "solve", "--config", str(cfg), "--case", "cubic_1d", "--p", "42", "--n", "64")
    assert code == 1
    assert read_rows(out / "report.csv")[0]["converged"] == "false"
    assert (out / "solution_p42.csv").exists()


def test_benchmark_p2_k1(tmp_path):
    code, out = run(tmp_path, "benchmark", "--p", "2", "--k", "1", "--levels", "4")
    assert code == 0
    rows = read_rows(out / "eoc_manufactured_sine_p2_k1.csv")
    assert len(rows) == 4
    assert 1.85 <= float(rows[-1]["eoc_w"]) <= 2.3
    assert float(rows[-1]["eoc_u"]) >= 0.9
    dat = (out / "eoc_manufactured_sine_p2_k1.dat").read_text().splitlines()
    assert dat[0] == "# h err_w err_gradu"
    assert len(dat) == 5
    assert len(read_rows(out / "report.csv")) == 4


def test_benchmark_p2_k2(tmp_path):
    code, out = run(tmp_path, "benchmark", "--p", "2", "--k", "2", "--levels", "4")
    assert code == 0
    rows = read_rows(out / "eoc_manufactured_sine_p2_k2.csv")
    assert 2.8 <= float(rows[-1]["eoc_w"]) <= 3.5


def test_benchmark_threads_give_same_table(tmp_path, monkeypatch):
    code, serial = run(tmp_path, "benchmark", "--levels", "3", name="serial")
    monkeypatch.setenv("PBILAP_THREADS", "3")
    code2, par = run(tmp_path, "benchmark", "--levels", "3", name="par")
    assert code == code2 == 0
    name = "eoc_manufactured_sine_p2_k1.csv"
    assert (serial / name).read_text() == (par / name).read_text()


def test_benchmark_regenerate_ladder(tmp_path):
    code, out = run(tmp_path, "benchmark", "--levels", "3", "--ladder", "regenerate")
    assert code == 0
    rows = read_rows(out / "eoc_manufactured_sine_p2_k1.csv")
    assert [float(r["h_max"]) for r in rows] == [0.5, 0.25, 0.125]


def test_benchmark_failure_keeps_partial_table(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[newton]\nmax_iters = 1\n")
    code, out = run(tmp_path, "benchmark", "--config", str(cfg), "--p", "4", "--levels", "2")
    assert code == 1
    assert read_rows(out / "eoc_manufactured_sine_p4_k1.csv") == []
    assert len(read_rows(out / "report.csv")) == 1


def test_psweep_cubic(tmp_path):
    code, out = run(tmp_path, "psweep", "--case", "cubic_1d", "--p-schedule", "2,4,12,42,202", "--n", "128", "--k", "2")
    assert code == 0
    for p in ("2", "4", "12", "42", "202"):
        assert (out / f"field_p{p}.vtk").exists()
        assert (out / f"field_p{p}.dat").exists()
    diag = read_rows(out / "diagnostics.csv")
    assert [d["p"] for d in diag] == ["2", "4", "12", "42", "202"]
    assert diag[-1]["num_sign_changes"] == "1"
    dat = (out / "field_p202.dat").read_text().splitlines()
    assert dat[0] == "# x u w lap_u"
    assert len(dat) == 1 + 257


def test_psweep_cosine_panels(tmp_path):
    code, out = run(tmp_path, "psweep", "--case", "cosine_2d", "--m", "1", "--p-schedule", "4,42,68,142", "--n", "32")
    assert code == 0
    dumps = sorted(p.name for p in out.glob("field_p*.vtk"))
    assert dumps == ["field_p142.vtk", "field_p4.vtk", "field_p42.vtk", "field_p68.vtk"]
    diag = read_rows(out / "diagnostics.csv")
    assert len(diag) == 4
    assert all(float(d["stability_margin"]) >= -1e-6 for d in diag)
    # warm-up stage at p = 2 is solved but not dumped
    assert [r["p"] for r in read_rows(out / "report.csv")] == ["2", "4", "42", "68", "142"]


def test_psweep_abort_keeps_partial_outputs(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[newton]\nmax_iters = 1\n")
    code, out = run(tmp_path, "psweep", "--config", str(cfg), "--case", "cubic_1d", "--p-schedule", "2,42", "--n", "64")
    assert code == 1
    assert (out / "field_p2.vtk").exists()
    assert [d["p"] for d in read_rows(out / "diagnostics.csv")] == ["2"]


def test_rerun_is_deterministic(tmp_path):
    args = ["solve", "--case", "cubic_1d", "--p", "12", "--n", "32", "--k", "2"]
    _, a = run(tmp_path, *args, name="a")
    _, b = run(tmp_path, *args, name="b")
    for name in ("solution_p12.csv", "diagnostics.csv", "field_p12.dat", "field_p12.vtk"):
        assert (a / name).read_text() == (b / name).read_text()
    ra, rb = read_rows(a / "report.csv"), read_rows(b / "report.csv")
    for row in ra + rb:
        row.pop("wall_s")
    assert ra == rb


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "pbilap.cli", "psweep", "--p-schedule", "", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2
    assert "empty p schedule" in proc.stderr
