"""Command-line entry points."""

import pytest

from smagfem import cli
from smagfem.config import OUTPUT_ENV
from smagfem.diagnostics import ReportRecord, RunReport
from smagfem.output import TIMESERIES_HEADER
from smagfem.properties import PropertyResult

TINY_RUN = """\
case = mms_ns
nx = 4
ny = 4
t_end = 0.1
write_vtk = true
"""


@pytest.fixture(autouse=True)
def no_output_env(monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)


def test_info(capsys):
    assert cli.main(["info"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("4 cases:")
    assert "high_re_stabilized" in out


def test_run_writes_artifacts(tmp_path, capsys):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_RUN)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["config.cfg", "snapshot_000000.vtk", "snapshot_000001.vtk",
                     "snapshot_000002.vtk", "timeseries.csv"]
    rows = (out / "timeseries.csv").read_text().splitlines()
    assert rows[0] == TIMESERIES_HEADER
    assert len(rows) == 4
    assert all(row.endswith(",OK") for row in rows[1:])
    assert "output_dir = " + str(out) in (out / "config.cfg").read_text()
    printed = capsys.readouterr().out
    assert "Final errors: L2" in printed


def test_run_aborted_exits_1(tmp_path, monkeypatch, capsys):
    def aborted(config, on_output=None):
        report = RunReport(case=config.case)
        report.add(ReportRecord(0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0))
        report.abort("non-finite velocity or pressure", 0.01, 1)
        return report

    monkeypatch.setattr(cli, "run_simulation", aborted)
    assert cli.main(["run", "--case", "cylinder", "--out", str(tmp_path)]) == 1
    assert "INSTABILITY: non-finite velocity or pressure" in capsys.readouterr().out
    assert (tmp_path / "timeseries.csv").read_text().splitlines()[-1].endswith(",INSTABILITY")


def test_configuration_errors_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("case = mms_ns\ndt = -1\n")
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "line 2, key 'dt'" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert cli.main(["run", "--case", "channel"]) == 2


def test_usage_errors_exit_2():
    assert cli.main(["simulate"]) == 2
    assert cli.main([]) == 2
    assert cli.main(["--threads", "0", "info"]) == 2
    assert cli.main(["--help"]) == 0


def test_converge(capsys):
    assert cli.main(["converge", "--case", "mms_linear", "--levels", "2"]) == 0
    out = capsys.readouterr().out
    assert "Convergence study: mms_linear" in out
    assert "slope L2" in out
    assert cli.main(["converge", "--case", "shear_layer"]) == 1


def test_validate_reports_failures(monkeypatch, capsys):
    monkeypatch.setattr(cli, "run_all", lambda seed, quick: [PropertyResult("ok suite", True, 3, 0.0),
                                                             PropertyResult("bad suite", False, 3, 2.0)])
    assert cli.main(["validate", "--quick"]) == 1
    out = capsys.readouterr().out
    assert "bad suite" in out
    assert "1/2 property suites passed" in out


def test_run_writes_every_artifact_atomically(tmp_path, monkeypatch):
    written = []
    real_write = cli.atomic_write

    def record(path, text):
        written.append(path.name)
        return real_write(path, text)

    monkeypatch.setattr(cli, "atomic_write", record)
    monkeypatch.setattr(cli, "run_simulation", lambda config, on_output=None: RunReport(case=config.case))
    assert cli.main(["run", "--case", "mms_ns", "--out", str(tmp_path)]) == 0
    assert written == ["config.cfg"]
    assert sorted(p.name for p in tmp_path.iterdir()) == ["config.cfg", "timeseries.csv"]
