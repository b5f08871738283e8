"""
Run configuration: JSON file, environment defaults and CLI overrides.

Precedence, highest first: CLI flag, config file, environment
(``TELECOUPLING_*``, optionally from a ``.env`` file), built-in default.
"""

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from dotenv import find_dotenv, load_dotenv

from .accounting import SCOPES, VslParams
from .aoe import PRESETS, ScoreParams
from .econometrics import DesignSpec
from .errors import InputError, SpecificationError
from .models import SynthConfig
from .windfield import DEFAULT_RES


ENV_OUT_DIR = "TELECOUPLING_OUT_DIR"
ENV_THREADS = "TELECOUPLING_THREADS"
ENV_LOG_LEVEL = "TELECOUPLING_LOG_LEVEL"

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

INPUT_KEYS = (
    "cities", "wind", "panel", "panel_roles", "trade", "imports", "population", "forest",
    "land", "outcomes", "trade_shock", "coefficients", "binned",
)


class InvalidRunConfig(SpecificationError):
    """Raised when a run configuration cannot be validated."""
    pass


class ConfigFileError(InputError):
    """Raised when the config file is missing or is not a JSON object."""
    pass


@dataclass
class RunConfig:
    """Everything a command needs besides its inputs' contents."""

    inputs: Dict[str, str] = field(default_factory=dict)
    params: str = "appendix"
    score_overrides: Dict[str, float] = field(default_factory=dict)
    res: int = DEFAULT_RES
    period: Optional[Tuple[str, str]] = None
    iv_horizon: int = 4
    iv_years: Optional[List[int]] = None
    design: Optional[Dict[str, Any]] = None
    exposure: str = "z_loss"
    bin_outcome: str = "outcome"
    reference_bin: str = "10th"
    bin_frequency: str = "monthly"
    forest_scope: str = "pooled"
    placebo_reps: int = 1000
    placebo_levels: Tuple[float, ...] = (0.05, 0.01)
    characteristics: List[str] = field(default_factory=list)
    beta_trade: float = -0.174
    vsl: Dict[str, Optional[float]] = field(default_factory=dict)
    export_total: Optional[float] = None
    synth: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    out_dir: str = "telecoupling-out"
    threads: int = 1
    log_level: str = "WARNING"

    def __post_init__(self):
        if self.period is not None:
            self.period = tuple(self.period)
        self.placebo_levels = tuple(float(x) for x in self.placebo_levels)

    def validate(self) -> "RunConfig":
        """
        Check every field and the objects built from them.

        Raises:
            InvalidRunConfig: the first problem found
        """
        unknown = set(self.inputs) - set(INPUT_KEYS)
        if unknown:
            raise InvalidRunConfig(f"Unknown input(s): {', '.join(sorted(unknown))}")
        if self.params not in PRESETS:
            raise InvalidRunConfig(f"Unknown params preset '{self.params}'. Must be one of: {', '.join(PRESETS)}")
        if self.threads < 1:
            raise InvalidRunConfig("threads must be >= 1")
        if self.seed is not None and int(self.seed) < 0:
            raise InvalidRunConfig("seed must be a non-negative integer")
        if self.log_level.upper() not in LOG_LEVELS:
            raise InvalidRunConfig(f"log_level must be one of: {', '.join(LOG_LEVELS)}")
        if self.forest_scope not in SCOPES:
            raise InvalidRunConfig(f"forest_scope must be one of: {', '.join(SCOPES)}")
        if self.bin_frequency not in ("monthly", "annual"):
            raise InvalidRunConfig("bin_frequency must be 'monthly' or 'annual'")
        if self.period is not None and len(self.period) != 2:
            raise InvalidRunConfig("period must be [first_month, last_month]")
        if not all(0 < x < 1 for x in self.placebo_levels):
            raise InvalidRunConfig("placebo_levels must lie in (0, 1)")
        if self.iv_horizon < 1:
            raise InvalidRunConfig("iv_horizon must be >= 1")
        try:
            self.score_params()
            self.vsl_params()
            if self.design is not None:
                self.design_spec()
            if self.synth:
                SynthConfig.from_dict({**self.synth, "seed": self.seed or 0})
        except SpecificationError as e:
            raise InvalidRunConfig(str(e))
        except TypeError as e:
            raise InvalidRunConfig(f"Invalid configuration value: {e}")
        return self

    def score_params(self) -> ScoreParams:
        return ScoreParams.preset(self.params, **self.score_overrides)

    def vsl_params(self) -> VslParams:
        return VslParams(**self.vsl)

    def design_spec(self) -> Optional[DesignSpec]:
        return DesignSpec.from_dict(self.design) if self.design is not None else None

    def synth_config(self) -> SynthConfig:
        return SynthConfig.from_dict({**self.synth, "seed": self.require_seed()})

    def require_seed(self) -> int:
        """The declared seed; randomized commands never fall back to the clock."""
        if self.seed is None:
            raise InvalidRunConfig("This command is randomized: pass --seed or set 'seed' in the config file")
        return int(self.seed)

    def input_path(self, key: str) -> Path:
        if key not in self.inputs:
            raise InvalidRunConfig(f"No '{key}' input configured (set inputs.{key} in the config file or pass it as an option)")
        return Path(self.inputs[key])

    def to_dict(self) -> Dict[str, Any]:
        """Result-determining settings; threads, out_dir and log_level are left out."""
        return {
            "inputs": dict(sorted(self.inputs.items())),
            "params": self.params,
            "score_params": self.score_params().to_dict(),
            "score_overrides": dict(self.score_overrides),
            "res": self.res,
            "period": list(self.period) if self.period else None,
            "iv_horizon": self.iv_horizon,
            "iv_years": self.iv_years,
            "design": self.design,
            "exposure": self.exposure,
            "bin_outcome": self.bin_outcome,
            "reference_bin": self.reference_bin,
            "bin_frequency": self.bin_frequency,
            "forest_scope": self.forest_scope,
            "placebo_reps": self.placebo_reps,
            "placebo_levels": list(self.placebo_levels),
            "characteristics": list(self.characteristics),
            "beta_trade": self.beta_trade,
            "vsl": self.vsl_params().to_dict(),
            "export_total": self.export_total,
            "synth": dict(self.synth),
            "seed": self.seed,
        }


def _read_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigFileError(f"Config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigFileError(f"{path}: invalid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigFileError(f"{path}: config must be a JSON object")
    return data


def _environment() -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    if os.getenv(ENV_OUT_DIR):
        values["out_dir"] = os.getenv(ENV_OUT_DIR)
    if os.getenv(ENV_THREADS):
        try:
            values["threads"] = int(os.getenv(ENV_THREADS))
        except ValueError:
            raise InvalidRunConfig(f"{ENV_THREADS} must be an integer, got '{os.getenv(ENV_THREADS)}'")
    if os.getenv(ENV_LOG_LEVEL):
        values["log_level"] = os.getenv(ENV_LOG_LEVEL).upper()
    return values


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None,
                    dotenv: bool = True) -> RunConfig:
    """
    Build and validate a RunConfig.

    Args:
        path: optional JSON config file
        overrides: CLI values; None entries are ignored, ``inputs`` merges
        dotenv: read a ``.env`` file from the working directory first

    Raises:
        ConfigFileError: missing or unreadable config file
        InvalidRunConfig: unknown keys or invalid values
    """
    if dotenv:
        load_dotenv(find_dotenv(usecwd=True))
    known = {f.name for f in fields(RunConfig)}
    merged: Dict[str, Any] = _environment()

    file_values = _read_file(path) if path else {}
    unknown = set(file_values) - known
    if unknown:
        raise InvalidRunConfig(f"Unknown config key(s): {', '.join(sorted(unknown))}")
    merged.update(file_values)

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in known:
            raise InvalidRunConfig(f"Unknown config key '{key}'")
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    try:
        config = RunConfig(**merged)
    except TypeError as e:
        raise InvalidRunConfig(f"Invalid configuration: {e}")
    return config.validate()
