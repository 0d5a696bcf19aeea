import json
import subprocess
import sys

import pytest

from ccfluid.cli import main

CONFIG = "configs/paper-default.json"


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture()
def out(tmp_path):
    return str(tmp_path / "run")


class TestSimulateCommand:
    def test_trace_and_probe_count(self, out):
        code = run_cli(
            "simulate", "--config", CONFIG, "--horizon", "120", "--dt", "0.004",
            "--out", out, "--no-plot",
        )
        assert code == 0
        lines = (open(f"{out}/trace.csv").read()).splitlines()
        assert lines[0] == "t,x_bbr_total,x_cubic_total,phi_bbr,queue,loss,tau_min_0,w_0"
        # 120 s with 10 s probing -> at least 12 distinct estimate values
        import csv

        with open(f"{out}/trace.csv") as fh:
            rows = list(csv.DictReader(fh))
        tau_changes = sum(
            1
            for a, b in zip(rows, rows[1:])
            if a["tau_min_0"] != b["tau_min_0"]
        )
        assert tau_changes >= 11

    def test_manifest_references_outputs(self, out):
        assert run_cli(
            "simulate", "--config", CONFIG, "--horizon", "5", "--dt", "0.004",
            "--out", out, "--no-plot", "--jsonl",
        ) == 0
        manifest = json.load(open(f"{out}/manifest.json"))
        assert manifest["subcommand"] == "simulate"
        assert manifest["version"]
        assert manifest["duration_s"] > 0
        assert len(manifest["outputs"]) == 2  # csv + jsonl
        for path in manifest["outputs"]:
            assert path.startswith(out)
            assert open(path).readline()

    def test_plot_rendered_by_default(self, out):
        assert run_cli(
            "simulate", "--config", CONFIG, "--horizon", "2", "--dt", "0.004",
            "--out", out,
        ) == 0
        png = open(f"{out}/trace.png", "rb").read(8)
        assert png[:4] == b"\x89PNG"

    def test_byte_identical_reruns(self, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            out = str(tmp_path / name)
            assert run_cli(
                "simulate", "--config", CONFIG, "--horizon", "10",
                "--dt", "0.004", "--policy", "randomized", "--seed", "3",
                "--out", out, "--no-plot",
            ) == 0
            outs.append(open(f"{out}/trace.csv", "rb").read())
        assert outs[0] == outs[1]

    def test_theta_validation(self, out):
        assert run_cli(
            "simulate", "--config", CONFIG, "--horizon", "2", "--dt", "0.004",
            "--policy", "smoothed", "--theta", "0.1667", "--out", out, "--no-plot",
        ) == 0
        assert run_cli(
            "simulate", "--config", CONFIG, "--horizon", "2",
            "--policy", "smoothed", "--theta", "0", "--out", out, "--no-plot",
        ) == 2

    def test_missing_config_names_path(self, out, capsys):
        code = run_cli("simulate", "--config", "/nope/missing.json", "--out", out)
        assert code == 2
        assert "missing.json" in capsys.readouterr().err

    def test_all_writes_confined_to_out_dir(self, tmp_path, monkeypatch):
        import os

        workdir = tmp_path / "cwd"
        workdir.mkdir()
        out = tmp_path / "only-here"
        config = os.path.abspath(CONFIG)
        monkeypatch.chdir(workdir)
        assert run_cli(
            "simulate", "--config", config, "--horizon", "2", "--dt", "0.004",
            "--out", str(out), "--no-plot",
        ) == 0
        assert not list(workdir.iterdir())
        assert {p.name for p in out.iterdir()} == {"trace.csv", "manifest.json"}


class TestEquilibriumCommand:
    def test_starved_report(self, out):
        assert run_cli(
            "equilibrium", "--config", CONFIG, "--alpha", "1.0",
            "--out", out, "--no-plot",
        ) == 0
        report = json.load(open(f"{out}/equilibrium.json"))
        assert report["branch"] == "S2"
        assert report["x_btl_eq"] == pytest.approx(83.3333, abs=1e-3)

    def test_long_term_residual(self, out):
        assert run_cli(
            "equilibrium", "--config", CONFIG, "--long-term", "--out", out,
            "--no-plot",
        ) == 0
        report = json.load(open(f"{out}/equilibrium.json"))
        assert report["residual"] < 1e-8
        for key in ("alpha_hat", "s_eq", "w_max_eq", "x_btl_eq", "branch",
                    "w0", "w1", "w_lt", "w_gt", "w_bar"):
            assert key in report

    def test_modes_are_exclusive(self, out):
        with pytest.raises(SystemExit) as err:
            run_cli("equilibrium", "--config", CONFIG, "--alpha", "1.0",
                    "--long-term", "--out", out)
        assert err.value.code == 2

    def test_no_discriminant_regime_reports_null(self, tmp_path):
        # a tiny link keeps every reachable strength on the starved branch
        config = tmp_path / "tiny.json"
        config.write_text(json.dumps({
            "capacity": {"mbps": 0.05},
            "path_prop_delay": 0.04,
            "btl_prop_delay": 0.01,
            "buffer": {"bdp_multiple": 1.0},
        }))
        out = str(tmp_path / "o")
        assert run_cli("equilibrium", "--config", str(config), "--alpha", "1.25",
                       "--out", out, "--no-plot") == 0
        report = json.load(open(f"{out}/equilibrium.json"))
        assert report["alpha_hat"] is None
        assert report["branch"] == "S2"


class TestSweepCommand:
    def test_grid_rows(self, out):
        assert run_cli(
            "sweep", "--config", CONFIG, "--x", "capacity:50:150:5",
            "--y", "prop_delay:0.02:0.06:4", "--out", out, "--no-plot",
        ) == 0
        lines = open(f"{out}/sweep.csv").read().splitlines()
        assert lines[0] == "x_name,x_value,y_name,y_value,unstable,max_slope,w_bar"
        assert len(lines) == 1 + 20

    def test_default_steps_flag(self, out):
        assert run_cli(
            "sweep", "--config", CONFIG, "--x", "capacity:80:120",
            "--y", "buffer:1:2", "--steps", "3", "--out", out, "--no-plot",
        ) == 0
        assert len(open(f"{out}/sweep.csv").read().splitlines()) == 10

    def test_malformed_range(self, out):
        assert run_cli(
            "sweep", "--config", CONFIG, "--x", "capacity:zz:100",
            "--y", "buffer:1:2", "--out", out, "--no-plot",
        ) == 2
        assert run_cli(
            "sweep", "--config", CONFIG, "--x", "capacity",
            "--y", "buffer:1:2", "--out", out, "--no-plot",
        ) == 2


class TestBoundsCommand:
    def test_report_fields(self, out):
        assert run_cli("bounds", "--config", CONFIG, "--out", out, "--no-plot") == 0
        report = json.load(open(f"{out}/bounds.json"))
        for key in ("w_hat0", "w_hat1", "phi_max", "phi_min", "W_hat0",
                    "W_hat1", "phi_np_max", "phi_np_min", "wcap_case"):
            assert key in report
        assert 0 < report["phi_min"] < report["phi_max"] < 1

    def test_stable_config_is_numeric_failure(self, tmp_path, capsys):
        config = tmp_path / "stable.json"
        config.write_text(json.dumps({
            "capacity": {"mbps": 100},
            "path_prop_delay": 0.04,
            "btl_prop_delay": 0.01,
            "buffer": {"bdp_multiple": 0.3},
        }))
        code = run_cli("bounds", "--config", str(config),
                       "--out", str(tmp_path / "o"), "--no-plot")
        assert code == 3
        assert "numeric failure" in capsys.readouterr().err


class TestLinearizeCommand:
    def test_report(self, out):
        assert run_cli("linearize", "--config", CONFIG, "--out", out) == 0
        report = json.load(open(f"{out}/linearization.json"))
        assert report["stable"] is True
        assert report["K"] < 0
        assert len(report["eigenvalues"]) == 3


class TestHelpAndEnv:
    def test_help_lists_flags_with_units(self):
        for command in ("simulate", "equilibrium", "sweep", "bounds", "linearize"):
            proc = subprocess.run(
                [sys.executable, "-m", "ccfluid.cli", command, "--help"],
                capture_output=True, text=True,
            )
            assert proc.returncode == 0
            assert "--config" in proc.stdout and "--policy" in proc.stdout
            assert any(
                unit in proc.stdout
                for unit in ("seconds", "Mbps", "dimensionless")
            )

    def test_log_env_variable(self, out):
        proc = subprocess.run(
            [sys.executable, "-m", "ccfluid.cli", "equilibrium", "--config",
             CONFIG, "--alpha", "1.2", "--out", out, "--no-plot"],
            capture_output=True, text=True,
            env={"CCFLUID_LOG": "INFO", "PATH": "/usr/bin:/bin"},
        )
        assert proc.returncode == 0
        assert "artifacts" in proc.stderr
