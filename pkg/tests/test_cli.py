import configparser
import subprocess
import sys

import numpy as np
import pytest

from egp_topopt import cli, io

SMALL = ["--nx", "12", "--ny", "4", "--max-iter", "6"]


def run(argv, capsys=None):
    return cli.run_benchmark([str(a) for a in argv])


def test_mbb_run_writes_manifest_listed_outputs(tmp_path, capsys):
    assert run(["mbb", *SMALL, "-o", tmp_path]) == 0
    manifest = configparser.ConfigParser(interpolation=None)
    manifest.read(tmp_path / "mbb_egp_manifest.ini")
    outputs = [s.strip() for s in manifest["run"]["outputs"].split(",")]
    assert outputs == ["mbb_egp.csv", "mbb_egp.pgm"]
    for name in outputs:
        assert (tmp_path / name).is_file()
    assert manifest["problem"]["nx"] == "12"
    assert manifest["run"]["exit_status"] == "0"
    record = io.read_convergence_csv(tmp_path / "mbb_egp.csv")
    assert len(record) == int(manifest["run"]["iterations"]) <= 6
    assert io.read_pgm(tmp_path / "mbb_egp.pgm").shape == (4, 12)
    assert "mbb egp: objective" in capsys.readouterr().out


def test_repeated_runs_are_byte_identical(tmp_path):
    for sub in ("a", "b"):
        assert run(["mbb", *SMALL, "-o", tmp_path / sub]) == 0
    for name in ("mbb_egp.csv", "mbb_egp.pgm"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert np.all(io.read_convergence_csv(tmp_path / "a" / "mbb_egp.csv").column("fea_ms") == 0)


def test_timing_flag_records_wall_clock(tmp_path):
    assert run(["mbb", *SMALL, "--timing", "-o", tmp_path]) == 0
    assert io.read_convergence_csv(tmp_path / "mbb_egp.csv").column("fea_ms").sum() > 0


def test_compare_writes_both_methods_and_timing_table(tmp_path):
    assert run(["mbb", *SMALL, "--compare", "-o", tmp_path]) == 0
    for name in ("mbb_egp.csv", "mbb_oc.csv", "mbb_update_time.csv"):
        assert (tmp_path / name).is_file()
    header = (tmp_path / "mbb_update_time.csv").read_text().splitlines()[0]
    assert header == "iter,egp_update_ms,oc_update_ms,egp_fea_ms,oc_fea_ms"


def test_cantilever3d_writes_vtk(tmp_path):
    argv = ["cantilever3d", "--nx", "6", "--ny", "2", "--nz", "2", "--max-iter", "3", "-o", tmp_path]
    assert run(argv) == 0
    grid, x = io.read_vtk(tmp_path / "cantilever3d_egp.vtk")
    assert (grid.nx, grid.ny, grid.nz) == (6, 2, 2)
    assert x.sum() == pytest.approx(0.3 * 24, abs=1e-6)


def test_cli_overrides_config_file(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[problem]\npreset = mbb\nnx = 10\nny = 4\nname = beam\n"
                   "[optimizer]\ndelta = 0.2\nmax_iter = 3\n")
    assert run(["custom", cfg, "--nx", "14", "--delta", "0.1", "-o", tmp_path]) == 0
    manifest = configparser.ConfigParser(interpolation=None)
    manifest.read(tmp_path / "beam_egp_manifest.ini")
    assert manifest["problem"]["nx"] == "14"
    assert manifest["problem"]["ny"] == "4"
    assert manifest["optimizer"]["delta_upper"] == "0.1"
    assert manifest["optimizer"]["max_iter"] == "3"


@pytest.mark.parametrize("argv", [
    ["custom", "missing.ini"],
    ["inverter", "--nx", "8", "--ny", "8", "--method", "oc"],
    ["mbb", "-f", "1.5"],
])
def test_configuration_errors_exit_2(argv, tmp_path, capsys):
    assert run([*argv, "-o", tmp_path]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_bad_config_value_reports_line(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[problem]\npreset = mbb\nnx = many\n")
    assert run(["custom", cfg, "-o", tmp_path]) == 2
    assert f"{cfg}:3: [problem] nx:" in capsys.readouterr().err


def test_argparse_usage_errors_exit_2():
    with pytest.raises(SystemExit) as info:
        cli.run_benchmark(["mbb", "--no-such-flag"])
    assert info.value.code == 2


def test_unwritable_output_exits_1(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run(["mbb", *SMALL, "-o", blocker / "sub"]) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "egp_topopt", "mbb", *map(str, SMALL),
                           "-o", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "mbb_egp.csv").is_file()
