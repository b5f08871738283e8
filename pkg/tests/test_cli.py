"""
Tests for the CLI interface.
"""

import json
import pytest
from click.testing import CliRunner

from telecoupling.cli import cli


SYNTH = {
    "n_cities": 12,
    "n_days": 90,
    "wind_regime": "random-smooth",
    "lon_range": [-60.0, -50.0],
    "lat_range": [-12.0, -8.0],
}
DETERMINISM_SYNTH = {**SYNTH, "n_cities": 20}
BINS = ["calm", "1st", "2nd", "3rd", "4th", "5th", "6th", "7th", "8th", "9th", "10th"]


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_json(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


class TestCLI:
    """Test cases for CLI commands."""

    @pytest.fixture
    def runner(self):
        """Create a CLI test runner."""
        return CliRunner()

    @pytest.fixture
    def bundle(self, runner, tmp_path):
        """A synthetic input bundle; returns its run_config.json path."""
        settings = write_json(tmp_path / "synth.json", {"synth": SYNTH})
        data = tmp_path / "data"
        result = runner.invoke(cli, ["--config", str(settings), "--seed", "3", "--out", str(data), "synth"])
        assert result.exit_code == 0, result.output
        return data / "run_config.json"

    def test_cli_version(self, runner):
        """Test version option."""
        result = runner.invoke(cli, ["--version"])
        assert result.exit_code == 0
        assert "0.1.0" in result.output

    def test_cli_help(self, runner):
        """Test help option."""
        result = runner.invoke(cli, ["--help"])
        assert result.exit_code == 0
        assert "Telecoupling" in result.output
        for command in ("aoe-build", "iv", "fit", "placebo", "balance", "account", "synth"):
            assert command in result.output

    def test_synth_needs_seed(self, runner, tmp_path):
        result = runner.invoke(cli, ["--out", str(tmp_path / "out"), "synth"])
        assert result.exit_code == 3
        assert "--seed" in result.output

    def test_synth_writes_bundle(self, bundle):
        data = bundle.parent
        for name in ("cities.csv", "wind.csv", "panel.csv", "panel.roles.json", "trade.csv", "manifest.json"):
            assert (data / name).exists()
        config = read_json(bundle)
        assert config["seed"] == 3
        assert config["inputs"]["wind"] == str(data / "wind.csv")

    def test_missing_wind_file(self, runner, bundle, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        result = runner.invoke(cli, ["aoe-build", "--cities", str(bundle.parent / "cities.csv"), "--wind", "missing.csv"])
        assert result.exit_code == 2
        assert "missing.csv" in result.output

    def test_period_bounds_together(self, runner, bundle):
        result = runner.invoke(cli, ["--config", str(bundle), "aoe-build", "--period-start", "2001-01"])
        assert result.exit_code == 2

    def test_bad_config_file(self, runner, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        result = runner.invoke(cli, ["--config", "nope.json", "fit"])
        assert result.exit_code == 2
        assert "nope.json" in result.output

    def test_fit_undeclared_column(self, runner, bundle, tmp_path):
        config = read_json(bundle)
        config["design"] = {"outcome": "d_forest", "exog": ["nope"]}
        result = runner.invoke(cli, ["--config", str(write_json(tmp_path / "bad.json", config)), "fit"])
        assert result.exit_code == 3
        assert "nope" in result.output

    def test_account_empty_coefficients(self, runner, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        (tmp_path / "empty.csv").write_text("bin,coef\n", encoding="utf-8")
        result = runner.invoke(cli, ["account", "--coefficients", "empty.csv"])
        assert result.exit_code == 3
        assert "empty" in result.output

    @pytest.fixture
    def wide_bundle(self, runner, tmp_path):
        """A 20-city, 90-day bundle; returns its run_config.json path."""
        settings = write_json(tmp_path / "wide.json", {"synth": DETERMINISM_SYNTH})
        data = tmp_path / "wide"
        result = runner.invoke(cli, ["--config", str(settings), "--seed", "8", "--out", str(data), "synth"])
        assert result.exit_code == 0, result.output
        return data / "run_config.json"

    @pytest.mark.parametrize("threads", [4, 8])
    def test_aoe_build_independent_of_threads(self, runner, wide_bundle, tmp_path, threads):
        hashes = {}
        for count in (1, threads):
            out = tmp_path / f"aoe-{count}"
            result = runner.invoke(cli, ["--config", str(wide_bundle), "--threads", str(count), "--out", str(out),
                                         "aoe-build"])
            assert result.exit_code == 0, result.output
            hashes[count] = read_json(out / "manifest.json")["content_hash"]
        assert hashes[1] == hashes[threads]

    def test_unexpected_error_exits_one(self, runner, bundle, tmp_path, mocker):
        build = mocker.patch("telecoupling.cli.build_raw_scores", side_effect=RuntimeError("disk on fire"))
        result = runner.invoke(cli, ["--config", str(bundle), "--out", str(tmp_path / "broken"), "aoe-build"])
        assert result.exit_code == 1
        assert "RuntimeError" in result.output
        build.assert_called_once()

    def test_pipeline(self, runner, bundle, tmp_path):
        """The synthetic bundle runs through every command."""
        data = bundle.parent
        coefficients = tmp_path / "coefficients.csv"
        coefficients.write_text("bin,coef\n" + "".join(f"{b},{0.1 if b == '1st' else 0.0}\n" for b in BINS),
                                encoding="utf-8")
        steps = [
            ["aoe-build", "--heatmap-sender", "C01"],
            ["fit", "--bins", "--frequency", "annual"],
            ["account", "--coefficients", str(coefficients)],
            ["iv"],
            ["fit"],
            ["placebo", "--reps", "10"],
            ["balance"],
        ]
        for step in steps:
            result = runner.invoke(cli, ["--config", str(bundle)] + step)
            assert result.exit_code == 0, f"{step}: {result.output}"

        for name in ("aoe_report.json", "bin_fit_report.json", "account_report.json", "iv_report.json",
                     "fit_report.json", "placebo_report.json", "balance_report.json", "monthly_matrix.csv",
                     "bin_coefficients.csv", "ledger.csv", "heatmap_C01_2001-01-01.csv"):
            assert (data / name).exists(), name

        manifest = read_json(data / "manifest.json")
        assert "aoe_report.json" in manifest["artifacts"]
        assert "balance_report.json" in manifest["artifacts"]
        report = read_json(data / "placebo_report.json")
        assert report["kind"] == "placebo"
        assert report["payload"]["reps"] == 10
        assert report["payload"]["term"] == "iv"
        assert "threads" not in report["config"]
