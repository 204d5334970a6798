import csv
import io

import numpy as np
import pytest

from qdrtd import cli
from qdrtd.structure import build_paper_stack, format_stack_text
from qdrtd.transport import IVCurve

FAST = ["--set", "transport.profile_mode=linear"]


def run(tmp_path, *argv):
    return cli.main([*argv, "--output-dir", str(tmp_path)])


def csv_rows(path):
    return [r for r in csv.reader(line for line in open(path) if not line.startswith("#"))]


def test_parse_stack_config_round_trip():
    assert cli.parse_stack_config(format_stack_text(build_paper_stack())) == build_paper_stack()


def test_materials_dump(tmp_path, capsys):
    assert run(tmp_path, "materials", "--dump", "--temperature", "77") == 0
    out = capsys.readouterr().out
    assert "name,T,cb_offset_eV,m_eff,eps_rel,band_gap_eV" in out
    assert len(csv_rows(tmp_path / "materials.csv")) == 4


def test_band_diagram_pair(tmp_path):
    assert run(tmp_path, "band-diagram", "--stack", "paper", "--bias", "0", "--with-dots", "--without-dots") == 0
    with_d = np.array(csv_rows(tmp_path / "band_diagram_p0V_with_dots.csv")[1:], dtype=float)
    without = np.array(csv_rows(tmp_path / "band_diagram_p0V_without_dots.csv")[1:], dtype=float)
    k = int(np.argmin(np.abs(with_d[:, 0] - build_paper_stack().qd_position_nm)))
    assert with_d[k, 1] > without[k, 1]


def test_multiplication(tmp_path, capsys):
    assert run(tmp_path, "multiplication", "--photocurrent", "10e-9", "--rate", "115") == 0
    text = (tmp_path / "multiplication.txt").read_text()
    vals = dict(line.split(": ") for line in text.splitlines())
    assert float(vals["M_external"]) == pytest.approx(5.43e8, rel=0.01)
    assert float(vals["stated_M"]) == 1e7
    assert "M_external" in capsys.readouterr().out


def test_multiplication_zero_rate(tmp_path):
    assert run(tmp_path, "multiplication", "--photocurrent", "1e-9", "--rate", "0") == 2


def test_unknown_override_rejected(tmp_path, capsys):
    assert run(tmp_path, "materials", "--set", "quantum.bogus=1") == 2
    assert "bogus" in capsys.readouterr().err
    with pytest.raises(cli.ConfigError):
        cli.apply_overrides(["nosection.x=1"])
    with pytest.raises(cli.ConfigError):
        cli.apply_overrides(["dynamics.tau_recomb_s"])


def test_override_parsing():
    ov = cli.apply_overrides(["dynamics.tau_recomb_s=2e-6", "quantum.grid_nm=0.2",
                              "transport.qd_blocking=false", "dynamics.tau_storage_s=inf"])
    assert ov["dynamics"] == {"tau_recomb_s": 2e-6, "tau_storage_s": float("inf")}
    assert ov["electrostatics"] == {"max_spacing_nm": 0.2}
    assert ov["transport"] == {"qd_blocking": False}


def test_stack_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.stack"
    bad.write_text(format_stack_text(build_paper_stack()) + "GaAs -5 1e18\n")
    n = bad.read_text().count("\n")
    assert run(tmp_path, "band-diagram", "--stack", str(bad)) == 2
    err = capsys.readouterr().err
    assert f"line {n}" in err and "thickness" in err


def test_missing_stack_file(tmp_path):
    assert run(tmp_path, "band-diagram", "--stack", str(tmp_path / "nope.stack")) == 2


def test_convergence_exit_code(tmp_path, capsys):
    code = run(tmp_path, "band-diagram", "--bias", "-2", "--set", "electrostatics.max_iterations=2")
    assert code == 3
    assert "convergence" in capsys.readouterr().err


def test_partial_output_on_failure(tmp_path):
    code = run(tmp_path, "iv", "--stack", "symmetric", "--range", "4.9:5.2", "--step", "0.1")
    assert code == 2
    partial = tmp_path / "iv_former_p0V.csv.partial"
    assert partial.exists()
    assert len(IVCurve.from_csv(partial.read_text())) == 2
    assert not (tmp_path / "iv_former_p0V.csv").exists()


def test_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["materials", "--output-dir", str(blocker / "sub")]) == 4


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path))
    assert cli.main(["materials"]) == 0
    assert (tmp_path / "materials.csv").exists()


def test_iv_and_peaks(tmp_path):
    assert run(tmp_path, "iv", "--stack", "symmetric", "--range", "0:1.0", "--step", "0.1", *FAST) == 0
    curve = IVCurve.from_csv((tmp_path / "iv_former_p0V.csv").read_text())
    assert curve.meta["direction"] == "forward" and len(curve) == 11
    assert run(tmp_path, "peaks", "--input", str(tmp_path / "iv_former_p0V.csv")) == 0
    assert csv_rows(tmp_path / "iv_former_p0V_peaks.csv")[0] == ["label", "bias_V", "current_A"]


def test_peaks_missing_input(tmp_path):
    assert run(tmp_path, "peaks", "--input", str(tmp_path / "none.csv")) == 4


def test_memory_sweep_files(tmp_path):
    code = run(tmp_path, "memory-sweep", "--stack", "paper", "--former-bias", "-4,-2,0,2,4",
               "--range", "0:-0.2", "--step", "0.1", *FAST)
    assert code == 0
    names = sorted(p.name for p in tmp_path.glob("memory_former_*.csv"))
    assert len(names) == 5
    assert csv_rows(tmp_path / "memory_peaks.csv")[0] == ["former_bias_V", "label", "bias_V", "current_A"]
    occ = [IVCurve.from_csv((tmp_path / f"memory_former_{t}V.csv").read_text()).qd_occupancy[0]
           for t in ("m4", "m2", "p0", "p2", "p4")]
    assert occ == sorted(occ)


def test_photoresponse_deterministic(tmp_path):
    args = ["photoresponse", "--rates", "0,23", "--range", "0:-0.2", "--step", "0.1", "--seed", "5", *FAST]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, *args) == 0 and run(b, *args) == 0
    files = sorted(p.name for p in a.iterdir())
    assert "photoresponse_manifest.csv" in files and "photoresponse_summary.csv" in files
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_transmission(tmp_path):
    assert run(tmp_path, "transmission", "--stack", "symmetric", "--bias", "0.2", "--points", "50") == 0
    rows = csv_rows(tmp_path / "transmission_rtd_p0.2V.csv")
    assert rows[0] == ["energy_eV", "T"] and len(rows) > 50
    assert run(tmp_path, "transmission", "--stack", "symmetric", "--path", "qd") == 2


def test_plot(tmp_path):
    pytest.importorskip("matplotlib")
    assert run(tmp_path, "band-diagram", "--without-dots", "--plot") == 0
    assert (tmp_path / "band_diagram_p0V.svg").exists()


@pytest.mark.parametrize("sub,header", [
    ("iv", "bias_V,current_A,qd_occupancy,path_rtd_A,path_qd_A"),
    ("memory-sweep", "bias_V,current_A,qd_occupancy,path_rtd_A,path_qd_A"),
    ("peaks", "label,bias_V,current_A"),
    ("materials", "name,T,cb_offset_eV,m_eff,eps_rel,band_gap_eV"),
    ("band-diagram", "position_nm,Ec_eV,electron_density_cm3"),
    ("transmission", "energy_eV,T"),
])
def test_help_documents_schema(sub, header, capsys):
    with pytest.raises(SystemExit):
        cli.main([sub, "--help"])
    assert header in capsys.readouterr().out.replace("\n", " ").replace("  ", " ")
