import json
from pathlib import Path

import pytest

from nfcsim.cli import EXIT_OK, EXIT_PHYSICS, EXIT_SCENARIO, main

MINI = """
name = "mini_cli"

[conductor.cu]
resistivity_ohm_m = 1.68e-8
foil_thickness_m = 8e-6
trace_width_m = 0.002

[conductor.cu_fine]
resistivity_ohm_m = 1.68e-8
foil_thickness_m = 8e-6
trace_width_m = 0.0005

[coil.main]
kind = "meander"
conductor = "cu"
width_m = 0.08
height_m = 0.062
pitch_m = 0.01
trace_width_m = 0.002

[coil.small]
kind = "spiral"
conductor = "cu_fine"
outer_width_m = 0.02
outer_height_m = 0.02
turns = 3
pitch_m = 0.001
trace_width_m = 0.0005

[reader]
coil = "main"

[[tag]]
uid = 0x21
coil = "small"
position_m = [0.0, 0.005, 0.004]
load_matched_ohm = 300.0
load_modulating_ohm = 30.0

[compare]
first = "main"
second = "main"
heights_m = [0.003, 0.005, 0.007, 0.009]
"""


@pytest.fixture
def mini(tmp_path):
    p = tmp_path / "mini.toml"
    p.write_text(MINI, encoding="utf-8")
    return p


class TestSimulate:
    def test_success_exit_zero(self, mini, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["simulate", str(mini), "--seed", "2", "--out", str(out)]) == EXIT_OK
        assert (out / "manifest.json").is_file()
        assert "wrote" in capsys.readouterr().out

    def test_validation_error_exit_two(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text('name = "x"\nbogus = 1\n', encoding="utf-8")
        assert main(["simulate", str(bad)]) == EXIT_SCENARIO
        assert "scenario error" in capsys.readouterr().err

    def test_missing_file_exit_two(self, tmp_path):
        assert main(["simulate", str(tmp_path / "none.toml")]) == EXIT_SCENARIO


class TestFieldmap:
    def test_writes_grid_csv(self, mini, tmp_path):
        out = tmp_path / "map.csv"
        rc = main(["fieldmap", str(mini), "--coil", "main", "--grid", "4,5,1",
                   "--out", str(out)])
        assert rc == EXIT_OK
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "x,y,z,bx,by,bz"
        assert len(lines) == 1 + 4 * 5

    def test_unknown_coil_exit_two(self, mini):
        assert main(["fieldmap", str(mini), "--coil", "ghost", "--grid", "4,4,1"]) == EXIT_SCENARIO

    def test_bad_grid_exit_two(self, mini):
        assert main(["fieldmap", str(mini), "--coil", "main", "--grid", "4x4"]) == EXIT_SCENARIO

    def test_point_on_conductor_exit_three(self, mini, capsys):
        # a zero-height plane intersects the coil traces
        rc = main(["fieldmap", str(mini), "--coil", "main", "--grid", "5,5,1",
                   "--height", "0.0"])
        assert rc == EXIT_PHYSICS
        assert "physics error" in capsys.readouterr().err


class TestCompareCoils:
    def test_prints_report(self, mini, tmp_path, capsys):
        out = tmp_path / "cmp.txt"
        assert main(["compare-coils", str(mini), "--out", str(out)]) == EXIT_OK
        assert "ratio" in capsys.readouterr().out
        assert "decay length" in out.read_text()

    def test_without_section_exit_two(self, tmp_path):
        p = tmp_path / "nocmp.toml"
        p.write_text(MINI.split("[compare]")[0], encoding="utf-8")
        assert main(["compare-coils", str(p)]) == EXIT_SCENARIO


class TestReport:
    def test_rerenders_bundle(self, mini, tmp_path, capsys):
        out = tmp_path / "out"
        main(["simulate", str(mini), "--seed", "2", "--out", str(out)])
        capsys.readouterr()
        assert main(["report", str(out)]) == EXIT_OK
        text = capsys.readouterr().out
        assert "mini_cli" in text
        assert "link budgets:" in text

    def test_missing_manifest_exit_two(self, tmp_path):
        assert main(["report", str(tmp_path)]) == EXIT_SCENARIO
