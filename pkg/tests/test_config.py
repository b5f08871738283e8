"""
Tests for run configuration loading.
"""

import json
import pytest

from telecoupling.config import (
    ENV_LOG_LEVEL, ENV_OUT_DIR, ENV_THREADS, ConfigFileError, InvalidRunConfig, RunConfig, load_run_config,
)
from telecoupling.errors import InputError, SpecificationError


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    # set-then-delete so values a .env file loads are removed on teardown
    for name in (ENV_OUT_DIR, ENV_THREADS, ENV_LOG_LEVEL):
        monkeypatch.setenv(name, "unset")
        monkeypatch.delenv(name)


def write_config(tmp_path, data):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


class TestLoadRunConfig:
    """Test cases for load_run_config."""

    def test_defaults(self):
        config = load_run_config(dotenv=False)
        assert config.params == "appendix"
        assert config.threads == 1
        assert config.seed is None
        assert config.score_params().alpha == 0.8
        assert config.vsl_params().override_vsl == 0.7e6

    def test_file_values(self, tmp_path):
        path = write_config(tmp_path, {"params": "main-text", "seed": 7, "inputs": {"cities": "c.csv"}})
        config = load_run_config(path, dotenv=False)
        assert config.score_params().alpha == 0.7
        assert config.require_seed() == 7
        assert str(config.input_path("cities")) == "c.csv"

    def test_cli_beats_file_beats_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv(ENV_THREADS, "3")
        monkeypatch.setenv(ENV_OUT_DIR, str(tmp_path / "env"))
        path = write_config(tmp_path, {"threads": 2, "seed": 1})
        config = load_run_config(path, {"seed": 5, "threads": None}, dotenv=False)
        assert config.threads == 2
        assert config.seed == 5
        assert config.out_dir == str(tmp_path / "env")

    def test_inputs_merge(self, tmp_path):
        path = write_config(tmp_path, {"inputs": {"cities": "c.csv", "wind": "w.csv"}})
        config = load_run_config(path, {"inputs": {"wind": "other.csv"}}, dotenv=False)
        assert config.inputs == {"cities": "c.csv", "wind": "other.csv"}

    def test_dotenv_in_working_directory(self, tmp_path, monkeypatch):
        (tmp_path / ".env").write_text(f"{ENV_LOG_LEVEL}=debug\n", encoding="utf-8")
        monkeypatch.chdir(tmp_path)
        config = load_run_config()
        assert config.log_level == "DEBUG"

    def test_bad_thread_variable(self, monkeypatch):
        monkeypatch.setenv(ENV_THREADS, "many")
        with pytest.raises(InvalidRunConfig):
            load_run_config(dotenv=False)

    def test_missing_file_is_input_error(self, tmp_path):
        with pytest.raises(ConfigFileError) as excinfo:
            load_run_config(tmp_path / "nope.json", dotenv=False)
        assert isinstance(excinfo.value, InputError)
        assert "nope.json" in str(excinfo.value)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigFileError):
            load_run_config(path, dotenv=False)

    def test_not_an_object(self, tmp_path):
        with pytest.raises(ConfigFileError):
            load_run_config(write_config(tmp_path, [1, 2]), dotenv=False)

    def test_unknown_key(self, tmp_path):
        with pytest.raises(InvalidRunConfig):
            load_run_config(write_config(tmp_path, {"colour": "red"}), dotenv=False)

    def test_unknown_override(self):
        with pytest.raises(InvalidRunConfig):
            load_run_config(overrides={"colour": "red"}, dotenv=False)

    @pytest.mark.parametrize("values", [
        {"params": "legacy"},
        {"threads": 0},
        {"seed": -1},
        {"log_level": "LOUD"},
        {"forest_scope": "national"},
        {"bin_frequency": "weekly"},
        {"placebo_levels": [0.0]},
        {"iv_horizon": 0},
        {"inputs": {"weather": "w.csv"}},
        {"score_overrides": {"alpha": -1.0}},
        {"score_overrides": {"delta": 1.0}},
        {"vsl": {"override_vsl": -5}},
        {"design": {"outcome": "y", "endog": ["x"]}},
        {"synth": {"n_cities": 1}},
    ])
    def test_invalid_values(self, tmp_path, values):
        with pytest.raises(InvalidRunConfig) as excinfo:
            load_run_config(write_config(tmp_path, values), dotenv=False)
        assert isinstance(excinfo.value, SpecificationError)


class TestRunConfig:
    """Test cases for RunConfig helpers."""

    def test_require_seed(self):
        with pytest.raises(InvalidRunConfig) as excinfo:
            RunConfig().require_seed()
        assert "--seed" in str(excinfo.value)

    def test_missing_input(self):
        with pytest.raises(InvalidRunConfig):
            RunConfig().input_path("wind")

    def test_design_spec(self):
        config = RunConfig(design={"outcome": "y", "exog": ["x"], "fe": ["region"]}).validate()
        spec = config.design_spec()
        assert spec.exog == ("x",)
        assert RunConfig().design_spec() is None

    def test_synth_config_takes_seed(self):
        config = RunConfig(synth={"n_cities": 4}, seed=9)
        synth = config.synth_config()
        assert synth.n_cities == 4
        assert synth.seed == 9

    def test_to_dict_leaves_out_machine_settings(self):
        one = RunConfig(threads=1, out_dir="a", log_level="DEBUG").to_dict()
        two = RunConfig(threads=8, out_dir="b", log_level="ERROR").to_dict()
        assert one == two
        assert "threads" not in one
        assert one["score_params"]["n_steps"] == 7

    def test_period_becomes_tuple(self):
        assert RunConfig(period=["2001-01", "2001-06"]).period == ("2001-01", "2001-06")
