import json
import subprocess

import numpy as np
import pytest

from checkerhom.cli import RunConfig, load_config, run, write_resolved_config
from checkerhom.errors import ConfigurationError


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestLoadConfig:
    def test_minimal_file_fills_defaults(self, tmp_path):
        path = write(tmp_path, "c.toml", 'd = 2\nL = 8\nn0 = 4\n"lambda" = 0.4\n')
        cfg = load_config(path)
        cfg.validate()
        assert cfg.alpha == "1/4"
        assert cfg.resolved_eps() == 1e-8      # 2D default
        assert cfg.coverage_prob == 0.5

    def test_3d_eps_default(self, tmp_path):
        cfg = load_config(write(tmp_path, "c.toml", "d = 3\nL = 4\n"))
        cfg.validate()
        assert cfg.resolved_eps() == 1e-7

    def test_invalid_lambda_names_key(self, tmp_path):
        cfg = load_config(write(tmp_path, "c.toml", 'd = 2\nL = 4\n"lambda" = 1.5\n'))
        with pytest.raises(ConfigurationError, match="lambda"):
            cfg.validate()

    def test_unknown_key_rejected(self, tmp_path):
        path = write(tmp_path, "c.toml", "d = 2\nL = 4\nfrobnicate = 1\n")
        with pytest.raises(ConfigurationError, match="frobnicate"):
            load_config(path)

    def test_duplicate_L_deduplicated_with_warning(self, tmp_path):
        cfg = load_config(write(tmp_path, "c.toml", "d = 2\nL = [4, 8, 4]\n"))
        with pytest.warns(UserWarning):
            cfg.validate()
        assert cfg.L == [4, 8]

    def test_missing_file(self):
        with pytest.raises(ConfigurationError):
            load_config("/nonexistent/config.toml")

    def test_roundtrip_through_resolved_config(self, tmp_path):
        cfg = RunConfig(d=2, L=[4, 8], seed=9, M=3)
        cfg.validate()
        path = tmp_path / "resolved.toml"
        write_resolved_config(path, cfg)
        back = load_config(path)
        back.validate()
        assert back.to_mapping() == cfg.to_mapping()


class TestExitCodes:
    def test_config_error_exit_2(self, tmp_path, capsys):
        code = run(["sample", "--d", "2", "--L", "4", "--lambda", "1.5",
                    "--out", str(tmp_path)])
        assert code == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "configuration"

    def test_missing_dimension_exit_2(self, tmp_path):
        assert run(["sample", "--L", "4", "--out", str(tmp_path)]) == 2

    def test_numerical_failure_exit_3(self, tmp_path, capsys):
        code = run(["solve", "--d", "2", "--L", "4", "--seed", "1",
                    "--eps", "1e-30", "--max-iter", "2", "--out", str(tmp_path)])
        assert code == 3
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "numerical"


class TestSample:
    def test_empty_coverage_realization(self, tmp_path):
        code = run(["sample", "--d", "2", "--L", "4", "--coverage-prob", "0",
                    "--seed", "3", "--out", str(tmp_path)])
        assert code == 0
        doc = json.loads((tmp_path / "realization.json").read_text())
        assert doc["covered"] == []
        grid = (tmp_path / "grid_slice.csv").read_text()
        assert "# command = sample" in grid

    def test_3d_slice(self, tmp_path):
        code = run(["sample", "--d", "3", "--L", "2", "--seed", "1",
                    "--out", str(tmp_path)])
        assert code == 0
        lines = [ln for ln in (tmp_path / "grid_slice.csv").read_text().splitlines()
                 if not ln.startswith("#")]
        assert lines[0] == "i,j,value"
        assert len(lines) == 1 + 8 * 8


class TestSolve:
    def test_report_and_trace(self, tmp_path):
        code = run(["solve", "--d", "2", "--L", "4", "--seed", "1", "--trace",
                    "--out", str(tmp_path)])
        assert code == 0
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["converged"] is True
        assert doc["iterations"] >= 1
        assert doc["kron_rank_raw"] >= doc["kron_rank_agglomerated"]
        assert doc["config"]["d"] == 2
        trace = (tmp_path / "trace.csv").read_text().splitlines()
        assert any(ln.startswith("1,") for ln in trace)
        timings = (tmp_path / "timings.csv").read_text()
        assert "matrix," in timings and "solve," in timings

    def test_lkr_precond(self, tmp_path):
        code = run(["solve", "--d", "2", "--L", "4", "--seed", "2",
                    "--precond", "lkr", "--out", str(tmp_path)])
        assert code == 0
        doc = json.loads((tmp_path / "report.json").read_text())
        assert "lkr" in doc["preconditioner"]


class TestHomogenize:
    def test_single_realization(self, tmp_path):
        code = run(["homogenize", "--d", "2", "--L", "4", "--seed", "5",
                    "--out", str(tmp_path)])
        assert code == 0
        doc = json.loads((tmp_path / "ahom.json").read_text())
        matrix = np.array(doc["matrix"])
        assert matrix.shape == (2, 2)
        assert abs(matrix[0, 1] - matrix[1, 0]) <= 1e-6
        assert 0.4 <= matrix[0, 0] <= 1.0 + 1e-6


class TestSweep:
    def test_sweep_outputs(self, tmp_path):
        code = run(["sweep", "--d", "2", "--L", "2,4,8", "--M", "3",
                    "--seed", "11", "--out", str(tmp_path)])
        assert code == 0
        stats = [ln for ln in (tmp_path / "stats.csv").read_text().splitlines()
                 if ln and not ln.startswith("#")]
        assert stats[0].startswith("L,M,lambda,a11")
        assert len(stats) == 1 + 3
        records = [ln for ln in (tmp_path / "records.csv").read_text().splitlines()
                   if ln and not ln.startswith("#")]
        assert len(records) == 1 + 3 * 3
        slope = json.loads((tmp_path / "slope.json").read_text())
        assert slope["expected_slope"] == -1.0
        assert "slope" in slope
        assert (tmp_path / "resolved_config.toml").exists()

    def test_rerun_from_emitted_config_is_bit_identical(self, tmp_path):
        out1, out2 = tmp_path / "run1", tmp_path / "run2"
        assert run(["sweep", "--d", "2", "--L", "2,4", "--M", "3",
                    "--seed", "21", "--out", str(out1)]) == 0
        emitted = out1 / "resolved_config.toml"
        before = emitted.read_bytes()
        assert run(["sweep", "--config", str(emitted), "--out", str(out2)]) == 0
        for name in ("records.csv", "stats.csv", "slope.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        assert emitted.read_bytes() == before  # inputs are never mutated


class TestPrecondReport:
    def test_rank_column_nondecreasing(self, tmp_path):
        code = run(["precond-report", "--d", "2", "--L", "4",
                    "--eps-list", "1e-4,1e-8", "--out", str(tmp_path)])
        assert code == 0
        rows = [ln.split(",") for ln in
                (tmp_path / "precond_report.csv").read_text().splitlines()
                if ln and not ln.startswith("#")]
        assert rows[0] == ["L", "n", "eps", "rank", "achieved", "a", "b"]
        ranks = [int(r[3]) for r in rows[1:]]
        assert ranks == sorted(ranks)
        achieved = [float(r[4]) for r in rows[1:]]
        epss = [float(r[2]) for r in rows[1:]]
        assert all(a <= e for a, e in zip(achieved, epss))

    def test_eigenvalue_dump(self, tmp_path):
        code = run(["precond-report", "--d", "2", "--L", "4",
                    "--eps-list", "1e-2", "--dump-eigenvalues",
                    "--out", str(tmp_path)])
        assert code == 0
        lines = [ln for ln in (tmp_path / "eigenvalues_n16.csv").read_text().splitlines()
                 if ln and not ln.startswith("#")]
        assert lines[0] == "j,lambda_j"
        assert float(lines[1].split(",")[1]) == 0.0


class TestConsoleScript:
    def test_entry_point_runs(self, tmp_path):
        result = subprocess.run(
            ["checkerhom", "sample", "--d", "2", "--L", "2",
             "--coverage-prob", "0", "--out", str(tmp_path)],
            capture_output=True, text=True)
        assert result.returncode == 0
